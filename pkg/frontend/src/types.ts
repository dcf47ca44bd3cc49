// Wire types for the session service (JSON control endpoints + NDJSON stream).

export interface StepEvent {
  type: 'step';
  t: number;
  demand: number;
  served: number;
  new_backlog: number;
  backlog_total: number;
  dest_on_hand: number;
  in_transit: number;
  shock: number;
  node_on_hand: Record<string, number>;
  edge_utilization: Record<string, number>;
  injections: string[];
}

export interface SessionSummary {
  id: string;
  t: number;
  horizon: number;
  items: number;
  nodes: string[];
  destination: string;
  backlog_total: number;
  dest_on_hand: number;
  state_digest: string;
  injections: { step: number; label: string; patch: Record<string, unknown> }[];
  edges: { from: string; to: string; containers: number; volume: number; transit: number }[];
  coords: Record<string, [number, number]>;
  tiers: Record<string, string>;
}

export interface SnapshotMessage {
  type: 'snapshot';
  session: SessionSummary;
  events: StepEvent[];
}

export interface EndMessage {
  type: 'end';
  t: number;
}

export type StreamMessage = SnapshotMessage | StepEvent | EndMessage;

export interface PresetInfo {
  description: string;
  patch: Record<string, unknown>;
}

// utilization at or above this level renders as saturated
export const SATURATION_THRESHOLD = 0.95;
