// Gateway client: REST calls plus the streaming socket with auto-resubscribe.
//
// The WebSocket constructor is injected so the same client drives the
// browser (window.WebSocket) and the node test harness (the `ws` package).

import { ApiMessage } from "./types.js";

type WsLike = {
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  close(): void;
};

export type WsCtor = new (url: string) => WsLike;

export class GatewayClient {
  baseUrl: string;
  token: string | null = null;
  onMessage: ((msg: ApiMessage) => void) | null = null;
  onConnectionChange: ((up: boolean) => void) | null = null;
  private wsCtor: WsCtor;
  private ws: WsLike | null = null;
  private wantStream = false;
  private reconnectDelayMs = 500;

  constructor(baseUrl: string, wsCtor: WsCtor) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.wsCtor = wsCtor;
  }

  // ---------------------------------------------------------------- REST

  private async call<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await fetch(this.baseUrl + path, {
      method,
      headers: { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const data = (await resp.json()) as T & { error?: string; message?: string };
    if (!resp.ok || data.error) {
      throw new Error(data.error ? `${data.error}: ${data.message}` : resp.statusText);
    }
    return data;
  }

  async claimOperator(clientId = "console"): Promise<string> {
    const out = await this.call<{ token: string }>("POST", "/operator/claim", {
      client_id: clientId,
    });
    this.token = out.token;
    return out.token;
  }

  releaseOperator(): Promise<unknown> {
    const token = this.token;
    this.token = null;
    return this.call("POST", "/operator/release", { token });
  }

  scan(durationS = 0.5): Promise<{ devices: unknown[] }> {
    return this.call("GET", `/devices?duration_s=${durationS}`);
  }

  connect(mac: string): Promise<unknown> {
    return this.call("POST", "/connect", { mac });
  }

  dashboard(mac: string): Promise<unknown> {
    return this.call("GET", `/dashboard?mac=${encodeURIComponent(mac)}`);
  }

  calibrate(mac: string): Promise<unknown> {
    return this.call("POST", "/calibrate", { mac, token: this.token });
  }

  startSession(mac: string, config?: Record<string, unknown>): Promise<unknown> {
    return this.call("POST", "/session/start", { mac, token: this.token, config });
  }

  stopSession(mac: string, exportDir?: string): Promise<unknown> {
    return this.call("POST", "/session/stop", {
      mac, token: this.token, export_dir: exportDir,
    });
  }

  annotate(mac: string, tag: string): Promise<unknown> {
    return this.call("POST", "/annotate", { mac, token: this.token, tag });
  }

  scheduleOffline(mac: string, totalS: number, segmentS: number): Promise<unknown> {
    return this.call("POST", "/offline", {
      mac, token: this.token, total_s: totalS, segment_s: segmentS,
    });
  }

  files(mac: string): Promise<{ files: unknown[] }> {
    return this.call("GET", `/files?mac=${encodeURIComponent(mac)}`);
  }

  fetchFile(mac: string, fileId: number, outDir?: string): Promise<unknown> {
    return this.call("POST", "/fetch", {
      mac, token: this.token, file_id: fileId, out_dir: outDir,
    });
  }

  // ---------------------------------------------------------------- stream

  openStream(): void {
    this.wantStream = true;
    this.dial();
  }

  closeStream(): void {
    this.wantStream = false;
    if (this.ws) this.ws.close();
    this.ws = null;
  }

  private dial(): void {
    if (!this.wantStream) return;
    const url = this.baseUrl.replace(/^http/, "ws") + "/ws";
    const ws = new this.wsCtor(url);
    this.ws = ws;
    ws.onopen = () => {
      this.reconnectDelayMs = 500;
      this.onConnectionChange?.(true);
    };
    ws.onmessage = (ev) => {
      const msg = JSON.parse(String(ev.data)) as ApiMessage;
      this.onMessage?.(msg);
    };
    const drop = () => {
      if (this.ws !== ws) return;
      this.ws = null;
      this.onConnectionChange?.(false);
      if (this.wantStream) {
        setTimeout(() => this.dial(), this.reconnectDelayMs);
        this.reconnectDelayMs = Math.min(this.reconnectDelayMs * 2, 5000);
      }
    };
    ws.onclose = drop;
    ws.onerror = drop;
  }
}
