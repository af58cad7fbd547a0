// End-to-end console workflow against a real gateway subprocess:
// scan -> connect -> calibrate -> 60 s live session with 3 annotations ->
// offline schedule -> file list -> verified fetch.  Asserts the render
// cadence and that the exported session carries the annotations in-bounds.

import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { GatewayClient, WsCtor } from "../src/api.js";
import { apply, initialState } from "../src/model.js";
import { ApiMessage, CalibReport, Dashboard, FileEntry } from "../src/types.js";

const PORT = 18_000 + Math.floor(Math.random() * 1000);
const BASE = `http://127.0.0.1:${PORT}`;

let gateway: ChildProcess;
let workDir: string;

async function waitForGateway(): Promise<void> {
  const deadline = Date.now() + 30_000;
  while (Date.now() < deadline) {
    try {
      const resp = await fetch(`${BASE}/devices?duration_s=0.05`);
      if (resp.ok) return;
    } catch {
      /* not up yet */
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error("gateway did not come up");
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "console-e2e-"));
  const scn = join(workDir, "rest.scn");
  writeFileSync(scn, "seed 7\nnoise off\n0 72 rest 25\n");
  const cfg = join(workDir, "world.cfg");
  writeFileSync(cfg, [
    "[env]", "seed = 5",
    "[link]",
    "latency_up_ms = 5", "latency_up_jitter_ms = 2",
    "latency_down_ms = 5", "latency_down_jitter_ms = 2",
    "[ring demo]",
    `scenario = rest.scn`,
    "rssi_dbm = -48",
    "rtc_offset_s = 5",
    "",
  ].join("\n"));
  gateway = spawn("python3", ["-m", "ringkit.cli", "--env", cfg,
    "gateway", "--port", String(PORT)], {
    cwd: join(__dirname, "..", ".."),
    stdio: ["ignore", "pipe", "pipe"],
  });
  await waitForGateway();
}, 60_000);

afterAll(() => {
  gateway?.kill();
});

describe("full workflow through the console data layer", () => {
  it("scan, calibrate, 60 s live session, offline, fetch", async () => {
    const state = initialState();
    const client = new GatewayClient(BASE, WebSocket as unknown as WsCtor);
    const frameWallTimes: number[] = [];
    client.onMessage = (msg: ApiMessage) => {
      if (msg.kind === "RenderFrame") frameWallTimes.push(Date.now());
      apply(state, msg);
    };
    client.onConnectionChange = (up) => {
      state.connected = up;
    };
    client.openStream();
    await client.claimOperator("e2e");

    // tab A: scan
    await client.scan(0.3);
    await new Promise((r) => setTimeout(r, 300));
    expect(state.devices.length).toBe(1);
    const mac = state.devices[0].mac;
    expect(state.devices[0].rssi_dbm).toBeLessThan(-30);

    // tab B: connect + dashboard
    await client.connect(mac);
    state.dashboard = (await client.dashboard(mac)) as Dashboard;
    expect(state.dashboard.health).toBe("ok");
    expect(state.dashboard.battery_pct).toBe(100);

    // tab C: calibration of a +5 s device converges after one trim
    const report = (await client.calibrate(mac)) as CalibReport;
    expect(report.converged).toBe(true);
    expect(report.iterations.length).toBe(2);
    expect(report.iterations[0].offset_estimate_us).toBeGreaterThan(4_000_000);
    expect(Math.abs(report.final_offset_us)).toBeLessThan(1_000_000);

    // tab D: 60 s live session with three annotations
    await client.startSession(mac);
    state.sessionActive = true;
    const tags = ["warmup", "walking", "cooldown"];
    for (const tag of tags) {
      await new Promise((r) => setTimeout(r, 20_000));
      const clicked = Date.now();
      await client.annotate(mac, tag);
      while (!state.annotations.some((a) => a.tag === tag)) {
        if (Date.now() - clicked > 200) break;
        await new Promise((r) => setTimeout(r, 5));
      }
      // submission-to-rendered-ack latency against a local gateway
      expect(Date.now() - clicked).toBeLessThan(200);
    }
    const exportDir = join(workDir, "session-export");
    const stopped = (await client.stopSession(mac, exportDir)) as {
      records: number;
      annotations: number;
    };
    state.sessionActive = false;
    expect(stopped.annotations).toBe(3);
    expect(stopped.records).toBeGreaterThan(5_000);

    // render cadence: 30 +/- 2 Hz wall-clock over the session
    expect(frameWallTimes.length).toBeGreaterThan(1_500);
    const spanS = (frameWallTimes[frameWallTimes.length - 1] - frameWallTimes[0]) / 1000;
    const rate = (frameWallTimes.length - 1) / spanS;
    expect(rate).toBeGreaterThanOrEqual(28);
    expect(rate).toBeLessThanOrEqual(32);

    // annotations surfaced in the live tab and in the export, in-bounds
    expect(state.annotations.map((a) => a.tag)).toEqual(tags);
    const meta = JSON.parse(
      readFileSync(join(exportDir, "metadata.json"), "utf-8"));
    expect(meta.annotations.map((a: { tag: string }) => a.tag)).toEqual(tags);
    for (const ann of meta.annotations) {
      expect(ann.device_time_us).toBeGreaterThanOrEqual(meta.started_device_us);
      expect(ann.device_time_us).toBeLessThanOrEqual(meta.ended_device_us);
    }

    // tab E: offline schedule, wait out the plan, list and fetch verified
    const offline = (await client.scheduleOffline(mac, 4, 2)) as {
      planned_segments: number;
    };
    expect(offline.planned_segments).toBe(2);
    let files: FileEntry[] = [];
    const deadline = Date.now() + 30_000;
    while (Date.now() < deadline) {
      await new Promise((r) => setTimeout(r, 500));
      try {
        const out = (await client.files(mac)) as { files: FileEntry[] };
        if (out.files.length === 2) {
          files = out.files;
          break;
        }
      } catch {
        /* radio asleep while logging */
      }
    }
    expect(files.length).toBe(2);
    const fetched = (await client.fetchFile(mac, files[0].file_id)) as {
      crc_ok: boolean;
      size: number;
    };
    expect(fetched.crc_ok).toBe(true);
    expect(fetched.size).toBe(files[0].size);
    // progress messages ride the stream; let the tail flush
    const flushDeadline = Date.now() + 5_000;
    while (state.fetchProgress?.pct !== 100 && Date.now() < flushDeadline) {
      await new Promise((r) => setTimeout(r, 100));
    }
    expect(state.fetchProgress?.pct).toBe(100);

    client.closeStream();
  }, 180_000);
});
