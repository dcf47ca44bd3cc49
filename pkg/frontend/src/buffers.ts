// Dashboard state: windowed, append-only chart buffers fed by stream events.
// Rebuilding from a snapshot and then appending deltas must produce exactly
// what a continuous subscription would have shown.

import type { SessionSummary, SnapshotMessage, StepEvent } from './types.js';

export interface Annotation {
  step: number;
  label: string;
}

export class ChartBuffer {
  steps: number[] = [];
  values: number[] = [];

  constructor(readonly window: number) {}

  push(step: number, value: number): void {
    this.steps.push(step);
    this.values.push(value);
    if (this.values.length > this.window) {
      this.steps.splice(0, this.steps.length - this.window);
      this.values.splice(0, this.values.length - this.window);
    }
  }

  get last(): number | undefined {
    return this.values[this.values.length - 1];
  }

  max(): number {
    return this.values.length ? Math.max(...this.values) : 0;
  }

  /** The trailing `n` (step, value) pairs, oldest first. */
  tail(n: number): [number, number][] {
    const start = Math.max(0, this.values.length - n);
    const out: [number, number][] = [];
    for (let i = start; i < this.values.length; i++) {
      out.push([this.steps[i], this.values[i]]);
    }
    return out;
  }
}

export class DashboardState {
  session: SessionSummary | null = null;
  step = -1; // last rendered step index
  eventCount = 0; // events consumed (stream cursor for reconnects)
  playing = false;
  speed = 4; // steps per second
  annotations: Annotation[] = [];

  demand: ChartBuffer;
  served: ChartBuffer;
  backlog: ChartBuffer;
  destOnHand: ChartBuffer;
  shock: ChartBuffer;
  edgeUtilization = new Map<string, ChartBuffer>();
  nodeOnHand = new Map<string, number>();

  constructor(readonly window = 600) {
    this.demand = new ChartBuffer(window);
    this.served = new ChartBuffer(window);
    this.backlog = new ChartBuffer(window);
    this.destOnHand = new ChartBuffer(window);
    this.shock = new ChartBuffer(window);
  }

  lastMileEdges(): string[] {
    if (!this.session) return [];
    const dest = this.session.destination;
    return this.session.edges
      .filter((e) => e.to === dest)
      .map((e) => `${e.from}->${e.to}`);
  }

  applySnapshot(snapshot: SnapshotMessage): void {
    this.session = snapshot.session;
    this.step = -1;
    this.eventCount = 0;
    this.annotations = snapshot.session.injections.map((inj) => ({
      step: inj.step,
      label: inj.label,
    }));
    for (const buffer of this.allBuffers()) {
      buffer.steps.length = 0;
      buffer.values.length = 0;
    }
    this.edgeUtilization.clear();
    for (const event of snapshot.events) {
      this.applyEvent(event);
    }
  }

  applyEvent(event: StepEvent): void {
    if (event.t <= this.step) {
      throw new Error(`event for step ${event.t} arrived out of order (at ${this.step})`);
    }
    this.step = event.t;
    this.eventCount += 1;
    this.demand.push(event.t, event.demand);
    this.served.push(event.t, event.served);
    this.backlog.push(event.t, event.backlog_total);
    this.destOnHand.push(event.t, event.dest_on_hand);
    this.shock.push(event.t, event.shock);
    for (const [edge, util] of Object.entries(event.edge_utilization)) {
      let buffer = this.edgeUtilization.get(edge);
      if (!buffer) {
        buffer = new ChartBuffer(this.window);
        this.edgeUtilization.set(edge, buffer);
      }
      buffer.push(event.t, util);
    }
    for (const [node, onHand] of Object.entries(event.node_on_hand)) {
      this.nodeOnHand.set(node, onHand);
    }
    for (const label of event.injections) {
      this.addAnnotation(event.t, label);
    }
  }

  // chart markers are idempotent: a snapshot's injection log and a replayed
  // step event may both report the same (step, label)
  private addAnnotation(step: number, label: string): void {
    if (!this.annotations.some((a) => a.step === step && a.label === label)) {
      this.annotations.push({ step, label });
    }
  }

  private allBuffers(): ChartBuffer[] {
    return [this.demand, this.served, this.backlog, this.destOnHand, this.shock,
            ...this.edgeUtilization.values()];
  }
}
