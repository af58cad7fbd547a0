// Console bootstrap: wires the gateway client, the reducer, and the views.

import { GatewayClient, WsCtor } from "./api.js";
import { apply, initialState, sortDevices, Tab } from "./model.js";
import { Handlers, renderTabs } from "./views.js";
import { Advertisement, Dashboard } from "./types.js";

const state = initialState();
const client = new GatewayClient(
  `${location.protocol}//${location.host}`,
  WebSocket as unknown as WsCtor,
);

let renderQueued = false;
function render(): void {
  if (renderQueued) return;
  renderQueued = true;
  requestAnimationFrame(() => {
    renderQueued = false;
    renderTabs(state, handlers);
  });
}

client.onMessage = (msg) => {
  apply(state, msg);
  render();
};
client.onConnectionChange = (up) => {
  state.connected = up;
  render();
};

async function refreshDashboard(): Promise<void> {
  if (!state.selected) return;
  state.dashboard = (await client.dashboard(state.selected)) as Dashboard;
  render();
}

const handlers: Handlers = {
  onTab(tab: Tab) {
    state.tab = tab;
    if (tab === "device") void refreshDashboard().catch(showError);
    render();
  },
  onScan() {
    client.scan().then(() => render()).catch(showError);
  },
  onSelect(mac: string) {
    state.selected = mac;
    client.connect(mac)
      .then(() => refreshDashboard())
      .then(() => {
        state.tab = "device";
        render();
      })
      .catch(showError);
  },
  onSort(key: keyof Advertisement) {
    state.scanSort = key;
    state.devices = sortDevices(state.devices, key);
    render();
  },
  onCalibrate() {
    if (!state.selected) return;
    state.calibrating = true;
    render();
    client.calibrate(state.selected).catch((err) => {
      state.calibrating = false;
      showError(err);
    });
  },
  onSessionToggle() {
    if (!state.selected) return;
    const mac = state.selected;
    if (state.sessionActive) {
      client.stopSession(mac).then(() => {
        state.sessionActive = false;
        render();
      }).catch(showError);
    } else {
      state.annotations = [];
      client.startSession(mac).then(() => {
        state.sessionActive = true;
        render();
      }).catch(showError);
    }
  },
  onAnnotate(tag: string) {
    if (state.selected) client.annotate(state.selected, tag).catch(showError);
  },
  onOffline(totalS: number, segmentS: number) {
    if (state.selected) {
      client.scheduleOffline(state.selected, totalS, segmentS).catch(showError);
    }
  },
  onListFiles() {
    if (state.selected) client.files(state.selected).then(() => render()).catch(showError);
  },
  onFetch(fileId: number) {
    if (state.selected) client.fetchFile(state.selected, fileId).catch(showError);
  },
};

function showError(err: unknown): void {
  state.lastError = String(err instanceof Error ? err.message : err);
  render();
}

window.addEventListener("load", () => {
  client.claimOperator().catch(showError);
  client.openStream();
  handlers.onScan();
  render();
});
