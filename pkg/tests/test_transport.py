"""Simulated link tests: scan, connect, channels, pacing, faults."""

import pytest

from ringkit import proto, transport
from ringkit.proto import FrameKind, Mode, Opcode, command
from ringkit.ringsim import Scenario, VirtualRing
from ringkit.transport import (
    AlreadyConnected,
    Disconnected,
    Environment,
    LatencySpec,
    LinkParams,
    Timeout,
    UnknownDevice,
)

US = 1_000_000


def make_env(n_rings=1, seed=0, params=None, **ring_kw) -> Environment:
    env = Environment(seed=seed, params=params)
    for i in range(n_rings):
        scn = Scenario.constant(f"scn{i}", seed=100 + i, hr_bpm=70.0, noise_on=False)
        env.add_ring(VirtualRing(f"ring{i}", scn, **ring_kw))
    return env


def fast_params(loss=0.0):
    return LinkParams(up=LatencySpec(1.0, 0.0), down=LatencySpec(1.0, 0.0), loss_rate=loss)


# ------------------------------------------------------------ scan


def test_scan_lists_each_powered_ring():
    env = make_env(3)
    ads = env.scan()
    assert len(ads) == 3
    assert len({a.mac for a in ads}) == 3
    for a in ads:
        assert -100 <= a.rssi_dbm <= -30
        assert a.battery_pct == 100


def test_scan_excludes_dead_ring():
    env = make_env(2, battery_mah=0.0)
    env2 = make_env(1)
    assert env.scan() == []
    assert len(env2.scan()) == 1


def test_scan_deterministic_under_seed():
    a = [ad.rssi_dbm for ad in make_env(3, seed=9).scan()]
    b = [ad.rssi_dbm for ad in make_env(3, seed=9).scan()]
    assert a == b


def test_scan_advances_virtual_time():
    env = make_env(1)
    env.scan(duration_s=2.5)
    assert env.now_us == 2_500_000


# ------------------------------------------------------------ connect


def test_connect_unknown_mac():
    env = make_env(1)
    with pytest.raises(UnknownDevice):
        env.connect("00:00:00:00:00:00")


def test_double_connect_rejected():
    env = make_env(1)
    mac = env.rings()[0].mac
    env.connect(mac)
    with pytest.raises(AlreadyConnected):
        env.connect(mac)


def test_connect_then_status_roundtrip():
    env = make_env(1)
    link = env.connect(env.rings()[0].mac)
    resp = link.request(command(Opcode.GET_STATUS))
    assert resp.ok
    report = proto.decode_status_report(resp.body)
    assert report.mode == Mode.IDLE
    assert report.battery_pct == 100


# ------------------------------------------------------------ command channel


def test_request_rtt_symmetric():
    params = LinkParams(up=LatencySpec(15.0, 5.0), down=LatencySpec(15.0, 5.0))
    env = make_env(1, params=params)
    link = env.connect(env.rings()[0].mac)
    rtts = []
    for _ in range(100):
        link.request(command(Opcode.GET_STATUS))
        rtts.append(link.last_rtt_us)
    mean_ms = sum(rtts) / len(rtts) / 1000
    assert 25.0 <= mean_ms <= 35.0
    assert all(20_000 <= r <= 40_000 for r in rtts)


def test_total_loss_times_out():
    env = make_env(1, params=fast_params(loss=1.0))
    link = env.connect(env.rings()[0].mac)
    with pytest.raises(Timeout):
        link.request(command(Opcode.GET_STATUS))
    assert link.retries == transport.COMMAND_ATTEMPTS


def test_zero_loss_zero_retries():
    env = make_env(1, params=fast_params(loss=0.0))
    link = env.connect(env.rings()[0].mac)
    for _ in range(20):
        assert link.request(command(Opcode.GET_STATUS)).ok
    assert link.retries == 0


def test_moderate_loss_mostly_succeeds_with_retries():
    # loss 0.3: an attempt survives with p=0.49, a request with p=1-0.51^3=0.867
    env = make_env(1, seed=3, params=fast_params(loss=0.3))
    link = env.connect(env.rings()[0].mac)
    ok = timeouts = 0
    for _ in range(50):
        try:
            link.request(command(Opcode.GET_STATUS))
            ok += 1
        except Timeout:
            timeouts += 1
    assert ok + timeouts == 50
    assert ok >= 38
    assert link.retries > 0


# ------------------------------------------------------------ notify channel


def collect_stream(env, link, duration_s):
    frames = []
    link.subscribe_notify(frames.append)
    assert link.request(command(Opcode.SET_MODE, mode=Mode.STREAMING)).ok
    env.run_for(round(duration_s * US))
    link.request(command(Opcode.SET_MODE, mode=Mode.IDLE))
    return [proto.decode_message(f) for f in frames if f.kind == FrameKind.STREAM_DATA]


def test_stream_no_loss_gap_free():
    env = make_env(1, params=fast_params())
    link = env.connect(env.rings()[0].mac)
    pkts = collect_stream(env, link, 2.0)
    seqs = [p.seq for p in pkts]
    assert seqs == list(range(len(seqs)))
    assert len(seqs) >= 40


def test_stream_loss_preserves_order():
    env = make_env(1, seed=17,
                   params=LinkParams(up=LatencySpec(1, 0), down=LatencySpec(1, 0),
                                     loss_rate=0.1))
    link = env.connect(env.rings()[0].mac)
    pkts = collect_stream(env, link, 50.0)
    seqs = [p.seq for p in pkts]
    assert seqs == sorted(seqs)
    dropped = 1000 - len([s for s in seqs if s < 1000])
    # ~100 of the first 1000 packets dropped; 3 sigma of Binomial(1000, 0.1)
    assert abs(dropped - 100) <= 3 * (1000 * 0.1 * 0.9) ** 0.5


def test_stream_fifo_never_reorders():
    env = make_env(1, seed=4,
                   params=LinkParams(up=LatencySpec(10, 9), down=LatencySpec(10, 9)))
    link = env.connect(env.rings()[0].mac)
    pkts = collect_stream(env, link, 5.0)
    seqs = [p.seq for p in pkts]
    assert seqs == sorted(seqs)


# ------------------------------------------------------------ bulk channel


def prelog(env, total_s=10, segment_s=10):
    """Run one offline recording so the flash has content, then reconnect."""
    ring = env.rings()[0]
    link = env.connect(ring.mac)
    assert link.request(command(Opcode.SCHEDULE_OFFLINE, start_delay_s=0,
                                total_s=total_s, segment_s=segment_s)).ok
    env.run_for((total_s + 2) * US)
    assert ring.mode == Mode.IDLE
    return env.connect(ring.mac)


def test_bulk_transfer_paced_at_128kbit():
    env = make_env(1, params=fast_params())
    link = prelog(env, total_s=43, segment_s=43)   # 4300 records = 163 400 B
    entry = env.rings()[0].flash.entries()[0]
    assert entry.size == 163_400
    deliveries = []
    t0 = env.now_us
    size, crc, payload = link.bulk_read(
        entry.file_id, progress=lambda done, total: deliveries.append((env.now_us, done)))
    elapsed = env.now_us - t0
    assert size == entry.size and len(payload) == entry.size
    assert proto.crc32(payload) == crc == entry.crc
    # 163400 B at 16000 B/s = 10.2125 s minimum
    assert elapsed >= 10_212_500
    assert elapsed <= 10_212_500 + 1_500_000
    # over any >= 1 s window of the transfer, goodput <= 16000 B/s + one chunk
    for i, (t_start, done_start) in enumerate(deliveries):
        for t_end, done_end in deliveries[i + 1:]:
            span = t_end - t_start
            if span >= US:
                assert (done_end - done_start) / (span / US) <= 16_000 + 1024


def test_bulk_reassembles_exact_payload():
    env = make_env(1, params=fast_params())
    link = prelog(env)
    seg = env.rings()[0].flash.segments[0]
    _, _, payload = link.bulk_read(seg.entry.file_id)
    assert payload == seg.payload


def test_bulk_no_such_file():
    env = make_env(1, params=fast_params())
    link = prelog(env)
    with pytest.raises(transport.NoSuchFile):
        link.bulk_read(999)


def test_bulk_resume_after_disconnect():
    env = make_env(1, params=fast_params())
    link = prelog(env)
    seg = env.rings()[0].flash.segments[0]
    got = {}

    def watch(done, size):
        got["done"] = done
        if done >= seg.entry.size // 2:
            link.disconnect()

    with pytest.raises((Disconnected, transport.TransportError)):
        link.bulk_read(seg.entry.file_id, progress=watch)
    resume_at = got["done"]
    assert 0 < resume_at < seg.entry.size
    link2 = env.connect(env.rings()[0].mac)
    size, crc, rest = link2.bulk_read(seg.entry.file_id, resume_from=resume_at)
    whole = seg.payload[:resume_at] + rest
    assert len(whole) == seg.entry.size
    assert proto.crc32(whole) == seg.entry.crc
    assert whole == seg.payload


def test_bulk_corruption_injection_changes_payload():
    env = make_env(1, params=fast_params())
    link = prelog(env)
    seg = env.rings()[0].flash.segments[0]
    link.inject_bulk_corruption(2, bit=5)
    _, crc, payload = link.bulk_read(seg.entry.file_id)
    assert proto.crc32(payload) != crc
    assert len(payload) == seg.entry.size


# ------------------------------------------------------------ radio sleep


def test_offline_drops_link_and_hides_from_scan():
    env = make_env(1, params=fast_params())
    ring = env.rings()[0]
    link = env.connect(ring.mac)
    assert link.request(command(Opcode.SCHEDULE_OFFLINE, start_delay_s=0,
                                total_s=30, segment_s=10)).ok
    env.run_for(1 * US)
    assert ring.mode == Mode.LOGGING
    assert not link.connected
    assert env.scan() == []
    with pytest.raises(Disconnected):
        link.request(command(Opcode.GET_STATUS))
    env.run_for(40 * US)
    assert ring.mode == Mode.IDLE
    assert len(env.scan()) == 1


def test_determinism_fixed_seed_same_trace():
    def run():
        env = make_env(2, seed=5)
        ads = env.scan()
        link = env.connect(ads[0].mac)
        for _ in range(5):
            link.request(command(Opcode.GET_STATUS))
        return [a.rssi_dbm for a in ads], link.last_rtt_us, env.now_us

    assert run() == run()
