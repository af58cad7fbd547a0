// Console view state and its reducer.
//
// The UI is stateless with respect to truth: every field here is rebuilt
// from gateway messages, so reloading mid-session reconstructs the same
// views from a replayed stream.

import {
  Advertisement,
  AnnotationAck,
  ApiMessage,
  CalibReport,
  CHART_CHANNELS,
  Dashboard,
  FetchProgress,
  FileEntry,
  RenderFrame,
} from "./types.js";

export const TABS = ["scan", "device", "calibrate", "live", "offline"] as const;
export type Tab = (typeof TABS)[number];

export const FRAME_RATE_HZ = 30;
export const BUFFER_SECONDS = 60;
export const BUFFER_FRAMES = FRAME_RATE_HZ * BUFFER_SECONDS;

export interface ChannelBuffer {
  // parallel ring buffers of frame envelopes, bounded to BUFFER_FRAMES
  t_us: number[];
  lo: number[];
  hi: number[];
}

export interface ViewState {
  tab: Tab;
  connected: boolean;
  devices: Advertisement[];
  scanSort: keyof Advertisement;
  selected: string | null;
  dashboard: Dashboard | null;
  calibration: CalibReport | null;
  calibrating: boolean;
  sessionActive: boolean;
  buffers: Record<string, ChannelBuffer>;
  lastFrameIndex: number | null;
  hrBpm: number | null;
  hrConfidence: number | null;
  activityCount: number;
  annotationDraft: string;
  annotations: AnnotationAck[];
  files: FileEntry[];
  fetchProgress: FetchProgress | null;
  offlinePlanned: number | null;
  lastError: string | null;
}

export function initialState(): ViewState {
  const buffers: Record<string, ChannelBuffer> = {};
  for (const ch of CHART_CHANNELS) buffers[ch] = { t_us: [], lo: [], hi: [] };
  return {
    tab: "scan",
    connected: false,
    devices: [],
    scanSort: "rssi_dbm",
    selected: null,
    dashboard: null,
    calibration: null,
    calibrating: false,
    sessionActive: false,
    buffers,
    lastFrameIndex: null,
    hrBpm: null,
    hrConfidence: null,
    activityCount: 0,
    annotationDraft: "",
    annotations: [],
    files: [],
    fetchProgress: null,
    offlinePlanned: null,
    lastError: null,
  };
}

export function sortDevices(devices: Advertisement[], key: keyof Advertisement): Advertisement[] {
  const sorted = [...devices];
  sorted.sort((a, b) => {
    const va = a[key];
    const vb = b[key];
    if (typeof va === "number" && typeof vb === "number") return vb - va;
    return String(va).localeCompare(String(vb));
  });
  return sorted;
}

export function healthColor(health: Dashboard["health"]): string {
  return { ok: "green", warn: "amber", fault: "red" }[health];
}

export function flashUsedPct(d: Dashboard): number {
  return Math.round((100 * (d.flash_capacity - d.flash_free)) / d.flash_capacity);
}

function pushFrame(state: ViewState, frame: RenderFrame): void {
  state.lastFrameIndex = frame.index;
  for (const ch of CHART_CHANNELS) {
    const buf = state.buffers[ch];
    const env = frame.channels[ch];
    if (!env) continue;
    buf.t_us.push(frame.t_start_us);
    buf.lo.push(env[0]);
    buf.hi.push(env[1]);
    if (buf.t_us.length > BUFFER_FRAMES) {
      buf.t_us.splice(0, buf.t_us.length - BUFFER_FRAMES);
      buf.lo.splice(0, buf.lo.length - BUFFER_FRAMES);
      buf.hi.splice(0, buf.hi.length - BUFFER_FRAMES);
    }
  }
}

/** Fold one gateway message into the view state (mutates and returns it). */
export function apply(state: ViewState, msg: ApiMessage): ViewState {
  const body = msg.body as never;
  switch (msg.kind) {
    case "DeviceList":
      state.devices = sortDevices(
        (body as { devices: Advertisement[] }).devices, state.scanSort);
      break;
    case "Dashboard":
      state.dashboard = body as Dashboard;
      break;
    case "CalibReport":
      state.calibration = body as CalibReport;
      state.calibrating = false;
      break;
    case "RenderFrame":
      pushFrame(state, body as RenderFrame);
      break;
    case "HrUpdate": {
      const hr = body as HrUpdateBody;
      state.hrBpm = hr.bpm;
      state.hrConfidence = hr.confidence;
      state.activityCount = hr.activity_count;
      break;
    }
    case "AnnotationAck":
      state.annotations.push(body as AnnotationAck);
      break;
    case "FileList":
      state.files = (body as { files: FileEntry[] }).files;
      break;
    case "FetchProgress":
      state.fetchProgress = body as FetchProgress;
      break;
    case "OfflineStatus":
      state.offlinePlanned = (body as { planned_segments: number }).planned_segments;
      break;
    case "Error":
      state.lastError = `${(body as { code: string }).code}: ${(body as { message: string }).message}`;
      break;
  }
  return state;
}

interface HrUpdateBody {
  bpm: number | null;
  confidence: number | null;
  activity_count: number;
}

/** Rebuild a state from a replayed message log; the UI derives nothing else. */
export function replay(messages: ApiMessage[]): ViewState {
  const state = initialState();
  for (const msg of messages) apply(state, msg);
  return state;
}
