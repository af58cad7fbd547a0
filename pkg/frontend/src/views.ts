// DOM renderers for the five console tabs.  Views read ViewState only;
// every user action goes through the handler callbacks wired in main.ts.

import { drawStrip } from "./charts.js";
import { flashUsedPct, healthColor, Tab, TABS, ViewState } from "./model.js";
import { Advertisement, CHART_CHANNELS } from "./types.js";

export interface Handlers {
  onScan(): void;
  onSelect(mac: string): void;
  onSort(key: keyof Advertisement): void;
  onCalibrate(): void;
  onSessionToggle(): void;
  onAnnotate(tag: string): void;
  onOffline(totalS: number, segmentS: number): void;
  onListFiles(): void;
  onFetch(fileId: number): void;
  onTab(tab: Tab): void;
}

const CHANNEL_STYLES: Record<string, { stroke: string; fill: string }> = {
  ppg0: { stroke: "#ff6b6b", fill: "rgba(255,107,107,0.25)" },
  ppg1: { stroke: "#51cf66", fill: "rgba(81,207,102,0.25)" },
  ppg2: { stroke: "#845ef7", fill: "rgba(132,94,247,0.25)" },
  ax: { stroke: "#4dabf7", fill: "rgba(77,171,247,0.25)" },
  ay: { stroke: "#fcc419", fill: "rgba(252,196,25,0.25)" },
  az: { stroke: "#38d9a9", fill: "rgba(56,217,169,0.25)" },
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

export function renderTabs(state: ViewState, handlers: Handlers): void {
  for (const tab of TABS) {
    const button = el<HTMLButtonElement>(`tab-${tab}`);
    button.classList.toggle("active", state.tab === tab);
    button.onclick = () => handlers.onTab(tab);
    el<HTMLDivElement>(`pane-${tab}`).style.display =
      state.tab === tab ? "block" : "none";
  }
  el<HTMLDivElement>("banner").style.display = state.connected ? "none" : "block";
  renderScan(state, handlers);
  renderDevice(state, handlers);
  renderCalibrate(state, handlers);
  renderLive(state, handlers);
  renderOffline(state, handlers);
}

function renderScan(state: ViewState, handlers: Handlers): void {
  el<HTMLButtonElement>("scan-button").onclick = handlers.onScan;
  const tbody = el<HTMLTableSectionElement>("scan-rows");
  tbody.innerHTML = "";
  for (const d of state.devices) {
    const tr = document.createElement("tr");
    tr.innerHTML =
      `<td>${d.name}</td><td>${d.mac}</td><td>${d.rssi_dbm}</td>` +
      `<td>${d.battery_pct}%</td><td>${d.fw_version}</td>`;
    tr.classList.toggle("selected", d.mac === state.selected);
    tr.onclick = () => handlers.onSelect(d.mac);
    tbody.appendChild(tr);
  }
  for (const key of ["name", "rssi_dbm", "battery_pct"] as (keyof Advertisement)[]) {
    const th = document.getElementById(`sort-${key}`);
    if (th) (th as HTMLElement).onclick = () => handlers.onSort(key);
  }
}

function renderDevice(state: ViewState, handlers: Handlers): void {
  const box = el<HTMLDivElement>("device-info");
  if (!state.dashboard) {
    box.innerHTML = "<p>select a ring on the scan tab</p>";
    return;
  }
  const d = state.dashboard;
  const sensors = Object.entries(d.sensors)
    .map(([name, s]) => `<li>${name}: ${s.enabled ? s.rate_hz + " Hz" : "off"}</li>`)
    .join("");
  box.innerHTML = `
    <p><span class="dot ${healthColor(d.health)}"></span>
       <b>${d.mac}</b> — ${d.health.toUpperCase()} (${d.mode})</p>
    <ul>
      <li>battery: ${d.battery_pct}%</li>
      <li>flash: ${flashUsedPct(d)}% used (${d.flash_free} B free)</li>
      <li>firmware: ${d.fw_version}</li>
      ${sensors}
    </ul>`;
}

function renderCalibrate(state: ViewState, handlers: Handlers): void {
  const button = el<HTMLButtonElement>("calibrate-button");
  button.disabled = !state.selected || state.calibrating;
  button.onclick = handlers.onCalibrate;
  const box = el<HTMLDivElement>("calibration-result");
  if (state.calibrating) {
    box.innerHTML = "<p>calibrating…</p>";
    return;
  }
  if (!state.calibration) {
    box.innerHTML = "<p>no calibration yet</p>";
    return;
  }
  const rows = state.calibration.iterations
    .map((it, i) =>
      `<tr><td>${i + 1}</td><td>${(it.rtt_us / 1000).toFixed(1)}</td>` +
      `<td>${(it.offset_estimate_us / 1000).toFixed(2)}</td>` +
      `<td>${it.trimmed ? "yes" : "no"}</td></tr>`)
    .join("");
  box.innerHTML = `
    <table><thead><tr><th>#</th><th>rtt ms</th><th>offset ms</th><th>trimmed</th></tr></thead>
    <tbody>${rows}</tbody></table>
    <p>final offset ${(state.calibration.final_offset_us / 1000).toFixed(2)} ms —
       ${state.calibration.converged ? "converged" : "NOT CONVERGED"}
       after ${state.calibration.iterations.length} iteration(s)</p>`;
}

function renderLive(state: ViewState, handlers: Handlers): void {
  const toggle = el<HTMLButtonElement>("session-toggle");
  toggle.textContent = state.sessionActive ? "stop session" : "start session";
  toggle.disabled = !state.selected;
  toggle.onclick = handlers.onSessionToggle;
  el<HTMLSpanElement>("hr-widget").textContent =
    state.hrBpm === null ? "--" : state.hrBpm.toFixed(1);
  el<HTMLSpanElement>("activity-widget").textContent = String(state.activityCount);
  const form = el<HTMLFormElement>("annotate-form");
  form.onsubmit = (ev) => {
    ev.preventDefault();
    const input = el<HTMLInputElement>("annotate-tag");
    if (input.value.trim()) handlers.onAnnotate(input.value.trim());
    input.value = "";
  };
  const list = el<HTMLUListElement>("annotation-list");
  list.innerHTML = state.annotations
    .map((a) => `<li>${a.tag} @ ${a.device_time_us} µs</li>`)
    .join("");
  for (const ch of CHART_CHANNELS) {
    const canvas = document.getElementById(`chart-${ch}`) as HTMLCanvasElement | null;
    if (canvas) {
      drawStrip(canvas, state.buffers[ch],
        { ...CHANNEL_STYLES[ch], label: ch }, 10_000_000);
    }
  }
}

function renderOffline(state: ViewState, handlers: Handlers): void {
  const form = el<HTMLFormElement>("offline-form");
  form.onsubmit = (ev) => {
    ev.preventDefault();
    const total = Number(el<HTMLInputElement>("offline-total").value);
    const segment = Number(el<HTMLInputElement>("offline-segment").value);
    handlers.onOffline(total, segment);
  };
  el<HTMLSpanElement>("offline-planned").textContent =
    state.offlinePlanned === null ? "" : `${state.offlinePlanned} segment(s) planned`;
  const bar = el<HTMLDivElement>("flash-bar");
  const pct = state.dashboard ? flashUsedPct(state.dashboard) : 0;
  bar.style.width = `${pct}%`;
  el<HTMLSpanElement>("flash-label").textContent = `${pct}% flash used`;
  el<HTMLButtonElement>("files-button").onclick = handlers.onListFiles;
  const tbody = el<HTMLTableSectionElement>("file-rows");
  tbody.innerHTML = "";
  for (const f of state.files) {
    const tr = document.createElement("tr");
    tr.innerHTML =
      `<td>${f.file_id}</td><td>${f.start_time_s}</td><td>${f.size}</td>` +
      `<td>${f.crc.toString(16).padStart(8, "0")}</td>`;
    const td = document.createElement("td");
    const button = document.createElement("button");
    button.textContent = "fetch";
    button.onclick = () => handlers.onFetch(f.file_id);
    td.appendChild(button);
    tr.appendChild(td);
    tbody.appendChild(tr);
  }
  const progress = el<HTMLSpanElement>("fetch-progress");
  progress.textContent = state.fetchProgress
    ? `file ${state.fetchProgress.file_id}: ${state.fetchProgress.pct}%`
    : "";
  el<HTMLSpanElement>("error-line").textContent = state.lastError ?? "";
}
