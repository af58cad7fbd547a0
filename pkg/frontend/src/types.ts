// Message and record shapes mirrored from the gateway API (see ../../API.md).

export interface Advertisement {
  name: string;
  mac: string;
  rssi_dbm: number;
  battery_pct: number;
  fw_version: string;
}

export interface SensorSettings {
  enabled: boolean;
  rate_hz: number;
  led?: number[];
  pulse_width_us?: number;
}

export interface Dashboard {
  mac: string;
  mode: string;
  sensors: Record<string, SensorSettings>;
  flash_free: number;
  flash_capacity: number;
  battery_pct: number;
  fw_version: string;
  fault_mask: number;
  health: "ok" | "warn" | "fault";
}

export interface CalibIteration {
  host_send_us: number;
  device_time_us: number;
  rtt_us: number;
  offset_estimate_us: number;
  trimmed: boolean;
}

export interface CalibReport {
  iterations: CalibIteration[];
  final_offset_us: number;
  converged: boolean;
}

export interface RenderFrame {
  mac: string;
  index: number;
  t_start_us: number;
  t_end_us: number;
  channels: Record<string, [number, number] | null>;
  sample_count: number;
}

export interface HrUpdate {
  mac: string;
  bpm: number | null;
  confidence: number | null;
  activity_count: number;
}

export interface AnnotationAck {
  mac: string;
  device_time_us: number;
  tag: string;
}

export interface FileEntry {
  file_id: number;
  start_time_s: number;
  size: number;
  crc: number;
}

export interface FetchProgress {
  mac: string;
  file_id: number;
  done: number;
  total: number;
  pct: number;
}

export interface ApiMessage {
  kind: string;
  seq: number;
  server_ts_us: number;
  body: Record<string, unknown>;
}

export const CHART_CHANNELS = ["ppg0", "ppg1", "ppg2", "ax", "ay", "az"] as const;
export type ChartChannel = (typeof CHART_CHANNELS)[number];
