// Minimal canvas line charts with a threshold band and injection markers.

import type { Annotation, ChartBuffer } from './buffers.js';

export interface SeriesSpec {
  buffer: ChartBuffer;
  color: string;
  label: string;
}

export interface ChartOptions {
  title: string;
  series: SeriesSpec[];
  annotations?: Annotation[];
  threshold?: number; // horizontal band, e.g. the 0.95 saturation line
  yMax?: number;
}

const PAD = { left: 44, right: 8, top: 18, bottom: 16 };

export function drawChart(canvas: HTMLCanvasElement, options: ChartOptions): void {
  const ctx = canvas.getContext('2d');
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.font = '11px system-ui, sans-serif';
  ctx.fillStyle = '#9fb3c8';
  ctx.fillText(options.title, PAD.left, 12);

  const allSteps = options.series.flatMap((s) => s.buffer.steps);
  if (allSteps.length === 0) return;
  const t0 = Math.min(...allSteps);
  const t1 = Math.max(...allSteps);
  let yMax = options.yMax ?? Math.max(...options.series.map((s) => s.buffer.max()), 1e-9);
  if (options.threshold !== undefined) yMax = Math.max(yMax, options.threshold * 1.1);

  const plotW = width - PAD.left - PAD.right;
  const plotH = height - PAD.top - PAD.bottom;
  const x = (t: number) => PAD.left + (t1 > t0 ? ((t - t0) / (t1 - t0)) * plotW : plotW / 2);
  const y = (v: number) => PAD.top + plotH - (v / yMax) * plotH;

  ctx.strokeStyle = '#2a3b4d';
  ctx.strokeRect(PAD.left, PAD.top, plotW, plotH);
  ctx.fillStyle = '#6b7f93';
  ctx.fillText(yMax.toPrecision(3), 2, PAD.top + 8);
  ctx.fillText('0', 2, PAD.top + plotH);
  ctx.fillText(String(t0), PAD.left, height - 4);
  ctx.fillText(String(t1), width - PAD.right - 30, height - 4);

  if (options.threshold !== undefined) {
    ctx.strokeStyle = '#d62828';
    ctx.setLineDash([4, 3]);
    ctx.beginPath();
    ctx.moveTo(PAD.left, y(options.threshold));
    ctx.lineTo(width - PAD.right, y(options.threshold));
    ctx.stroke();
    ctx.setLineDash([]);
  }

  for (const spec of options.series) {
    const { steps, values } = spec.buffer;
    if (values.length === 0) continue;
    ctx.strokeStyle = spec.color;
    ctx.lineWidth = 1.4;
    ctx.beginPath();
    ctx.moveTo(x(steps[0]), y(values[0]));
    for (let i = 1; i < values.length; i++) {
      ctx.lineTo(x(steps[i]), y(values[i]));
    }
    ctx.stroke();
  }

  for (const marker of options.annotations ?? []) {
    if (marker.step < t0 || marker.step > t1) continue;
    ctx.strokeStyle = '#f0a202';
    ctx.beginPath();
    ctx.moveTo(x(marker.step), PAD.top);
    ctx.lineTo(x(marker.step), PAD.top + plotH);
    ctx.stroke();
    ctx.fillStyle = '#f0a202';
    ctx.fillText(marker.label, Math.min(x(marker.step) + 3, width - 80), PAD.top + 10);
  }

  let lx = PAD.left + 4;
  for (const spec of options.series) {
    ctx.fillStyle = spec.color;
    ctx.fillText(spec.label, lx, PAD.top + plotH + 14);
    lx += ctx.measureText(spec.label).width + 14;
  }
}
