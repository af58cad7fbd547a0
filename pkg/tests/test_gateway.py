"""Gateway API tests: REST flow, stream cadence, backpressure, error codes."""

import time

import pytest
from fastapi.testclient import TestClient

from ringkit.gateway import (
    FRAME_QUEUE_LIMIT,
    KIND_ANNOTATION_ACK,
    KIND_HR_UPDATE,
    KIND_RENDER_FRAME,
    _WsClient,
    create_app,
)
from ringkit.ringsim import Scenario, VirtualRing
from ringkit.transport import Environment, LatencySpec, LinkParams


def make_app():
    params = LinkParams(up=LatencySpec(2.0, 0.0), down=LatencySpec(2.0, 0.0))
    env = Environment(seed=3, params=params)
    scn = Scenario.constant("demo", seed=21, hr_bpm=72.0, noise_on=False)
    env.add_ring(VirtualRing("demo-ring", scn))
    return create_app(env), env


@pytest.fixture
def client():
    app, env = make_app()
    with TestClient(app) as tc:
        tc.env = env
        yield tc


def claim(client):
    token = client.post("/operator/claim", json={"client_id": "t"}).json()["token"]
    return token


def test_device_list_and_dashboard(client):
    devices = client.get("/devices").json()["devices"]
    assert len(devices) == 1
    mac = devices[0]["mac"]
    dash = client.get("/dashboard", params={"mac": mac}).json()
    assert dash["health"] == "ok"
    assert dash["battery_pct"] == 100
    assert dash["mode"] == "idle"


def test_operator_role_required(client):
    mac = client.get("/devices").json()["devices"][0]["mac"]
    resp = client.post("/calibrate", json={"mac": mac})
    assert resp.status_code == 409
    assert resp.json()["error"] == "PermissionError"


def test_operator_claim_conflict(client):
    assert client.post("/operator/claim", json={"client_id": "a"}).status_code == 200
    assert client.post("/operator/claim", json={"client_id": "b"}).status_code == 409
    client.post("/operator/release", json={"token": "a"})
    assert client.post("/operator/claim", json={"client_id": "b"}).status_code == 200


def test_calibrate_endpoint(client):
    token = claim(client)
    mac = client.get("/devices").json()["devices"][0]["mac"]
    report = client.post("/calibrate", json={"mac": mac, "token": token}).json()
    assert report["converged"] is True
    assert len(report["iterations"]) >= 1


def test_unknown_mac_error_payload(client):
    resp = client.get("/dashboard", params={"mac": "11:11:11:11:11:11"})
    assert resp.status_code == 409
    assert resp.json()["error"] == "UnknownDevice"


def test_session_stream_and_annotate(client):
    token = claim(client)
    mac = client.get("/devices").json()["devices"][0]["mac"]
    with client.websocket_connect("/ws") as ws:
        assert client.post("/session/start",
                           json={"mac": mac, "token": token}).status_code == 200
        got_frames = 0
        first = last = None
        hr_updates = 0
        deadline = time.monotonic() + 4.0
        annotated = False
        while time.monotonic() < deadline:
            message = ws.receive_json()
            if message["kind"] == KIND_RENDER_FRAME:
                got_frames += 1
                now = time.monotonic()
                first = first or now
                last = now
            elif message["kind"] == KIND_HR_UPDATE:
                hr_updates += 1
            elif message["kind"] == KIND_ANNOTATION_ACK:
                annotated = True
            if got_frames == 30 and not annotated:
                ack = client.post("/annotate", json={
                    "mac": mac, "token": token, "tag": "walking"}).json()
                assert ack["tag"] == "walking"
                annotated = True
        stop = client.post("/session/stop", json={"mac": mac, "token": token}).json()
        assert stop["annotations"] == 1
        assert got_frames >= 60
        rate = (got_frames - 1) / (last - first)
        assert 28.0 <= rate <= 32.0


def test_ws_messages_monotone_seq(client):
    mac = client.get("/devices").json()["devices"][0]["mac"]
    token = claim(client)
    with client.websocket_connect("/ws") as ws:
        client.post("/session/start", json={"mac": mac, "token": token})
        seqs = [ws.receive_json()["seq"] for _ in range(40)]
        client.post("/session/stop", json={"mac": mac, "token": token})
    assert seqs == sorted(seqs)
    assert len(set(seqs)) == len(seqs)


def test_offline_files_fetch_flow(client, tmp_path):
    token = claim(client)
    mac = client.get("/devices").json()["devices"][0]["mac"]
    out = client.post("/offline", json={"mac": mac, "token": token,
                                        "total_s": 4, "segment_s": 2,
                                        "start_delay_s": 1}).json()
    assert out["planned_segments"] == 2
    # wall-paced world: wait for the plan to complete in virtual time
    deadline = time.monotonic() + 30.0
    files = []
    while time.monotonic() < deadline:
        time.sleep(0.25)
        resp = client.get("/files", params={"mac": mac})
        if resp.status_code == 200 and len(resp.json().get("files", [])) == 2:
            files = resp.json()["files"]
            break
    assert len(files) == 2
    fetched = client.post("/fetch", json={
        "mac": mac, "token": token, "file_id": files[0]["file_id"],
        "out_dir": str(tmp_path)}).json()
    assert fetched["crc_ok"] is True
    assert fetched["size"] == files[0]["size"]


def test_backpressure_drops_oldest_frames_only():
    client = _WsClient()
    for i in range(FRAME_QUEUE_LIMIT):
        client.push({"kind": KIND_RENDER_FRAME, "seq": i})
    client.push({"kind": KIND_HR_UPDATE, "seq": 9001})
    client.push({"kind": KIND_RENDER_FRAME, "seq": 9002})
    assert client.dropped_frames == 2
    kinds = [m["kind"] for m in client.queue]
    assert KIND_HR_UPDATE in kinds
    seqs = [m["seq"] for m in client.queue if m["kind"] == KIND_RENDER_FRAME]
    assert seqs == sorted(seqs)
    assert 0 not in seqs and 1 not in seqs     # oldest two dropped
    assert 9002 in seqs


def test_backpressure_never_drops_control_messages():
    client = _WsClient()
    for i in range(FRAME_QUEUE_LIMIT + 10):
        client.push({"kind": KIND_HR_UPDATE, "seq": i})
    assert client.dropped_frames == 0
    assert len(client.queue) == FRAME_QUEUE_LIMIT + 10
