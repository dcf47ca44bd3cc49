// Network diagram model: geographic placement when coordinates are shipped,
// tiered columns otherwise; edge coloring saturates at the 0.95 band.

import { SATURATION_THRESHOLD, type SessionSummary } from './types.js';

export interface NodePosition {
  id: string;
  x: number; // [0, 1]
  y: number; // [0, 1]
  tier: string;
}

export function layoutNodes(session: SessionSummary): NodePosition[] {
  const coords = session.coords ?? {};
  if (session.nodes.every((n) => coords[n] !== undefined)) {
    const xs = session.nodes.map((n) => coords[n][0]);
    const ys = session.nodes.map((n) => coords[n][1]);
    const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
    const [y0, y1] = [Math.min(...ys), Math.max(...ys)];
    return session.nodes.map((n) => ({
      id: n,
      x: x1 > x0 ? (coords[n][0] - x0) / (x1 - x0) : 0.5,
      y: y1 > y0 ? 1 - (coords[n][1] - y0) / (y1 - y0) : 0.5, // latitude up
      tier: session.tiers[n] ?? '',
    }));
  }
  return tierColumns(session);
}

export function tierColumns(session: SessionSummary): NodePosition[] {
  // columns ordered by hop depth from the sources, one column per tier label
  const tiers: string[] = [];
  for (const n of session.nodes) {
    const tier = session.tiers[n] ?? '';
    if (!tiers.includes(tier)) tiers.push(tier);
  }
  const byTier = new Map<string, string[]>();
  for (const n of session.nodes) {
    const tier = session.tiers[n] ?? '';
    const bucket = byTier.get(tier) ?? [];
    bucket.push(n);
    byTier.set(tier, bucket);
  }
  const out: NodePosition[] = [];
  tiers.forEach((tier, col) => {
    const members = byTier.get(tier) ?? [];
    members.forEach((n, row) => {
      out.push({
        id: n,
        x: tiers.length > 1 ? col / (tiers.length - 1) : 0.5,
        y: (row + 1) / (members.length + 1),
        tier,
      });
    });
  });
  return out;
}

/** Color stop for an edge's utilization; saturates at the 0.95 band. */
export function utilizationColor(util: number): string {
  const clamped = Math.max(0, Math.min(util, 1));
  if (clamped >= SATURATION_THRESHOLD) {
    return '#d62828'; // saturated
  }
  const heat = clamped / SATURATION_THRESHOLD;
  const green = Math.round(190 - 120 * heat);
  const red = Math.round(60 + 180 * heat);
  return `rgb(${red}, ${green}, 80)`;
}
