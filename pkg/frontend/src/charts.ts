// Canvas strip charts drawing min/max envelope bands from RenderFrames.
// Charts consume only frame envelopes, never raw records, so drawing cost
// is independent of the device sampling rate.

import { ChannelBuffer } from "./model.js";

export interface StripStyle {
  stroke: string;
  fill: string;
  label: string;
}

export function drawStrip(
  canvas: HTMLCanvasElement,
  buf: ChannelBuffer,
  style: StripStyle,
  windowUs: number,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#10151c";
  ctx.fillRect(0, 0, width, height);
  const n = buf.t_us.length;
  ctx.fillStyle = "#7a8699";
  ctx.font = "11px monospace";
  ctx.fillText(style.label, 6, 13);
  if (n < 2) return;

  const tEnd = buf.t_us[n - 1];
  const tStart = tEnd - windowUs;
  let lo = Infinity;
  let hi = -Infinity;
  let first = n - 1;
  for (let i = n - 1; i >= 0; i--) {
    if (buf.t_us[i] < tStart) break;
    first = i;
    if (buf.lo[i] < lo) lo = buf.lo[i];
    if (buf.hi[i] > hi) hi = buf.hi[i];
  }
  if (!(hi > lo)) {
    hi = lo + 1;
  }
  const pad = 0.08 * (hi - lo);
  lo -= pad;
  hi += pad;
  const x = (t: number) => ((t - tStart) / windowUs) * width;
  const y = (v: number) => height - ((v - lo) / (hi - lo)) * height;

  ctx.beginPath();
  for (let i = first; i < n; i++) ctx.lineTo(x(buf.t_us[i]), y(buf.hi[i]));
  for (let i = n - 1; i >= first; i--) ctx.lineTo(x(buf.t_us[i]), y(buf.lo[i]));
  ctx.closePath();
  ctx.fillStyle = style.fill;
  ctx.fill();
  ctx.beginPath();
  for (let i = first; i < n; i++) ctx.lineTo(x(buf.t_us[i]), y((buf.hi[i] + buf.lo[i]) / 2));
  ctx.strokeStyle = style.stroke;
  ctx.lineWidth = 1;
  ctx.stroke();
}
