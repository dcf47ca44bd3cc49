// HTTP client for the session service. All mutations go through the
// documented endpoints and are serialized through a single command queue so
// control actions cannot interleave with each other.

import { readNdjson } from './ndjson.js';
import type { PresetInfo, SessionSummary, StepEvent, StreamMessage } from './types.js';

export interface CreateOptions {
  config?: Record<string, unknown>;
  overrides?: Record<string, unknown>;
}

export class ServiceError extends Error {
  constructor(readonly status: number, detail: string) {
    super(`service returned ${status}: ${detail}`);
  }
}

async function expectJson(resp: Response): Promise<any> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = await resp.json();
      detail = body.detail ?? detail;
    } catch {
      /* non-JSON error body */
    }
    throw new ServiceError(resp.status, detail);
  }
  return resp.json();
}

export class CommandQueue {
  private chain: Promise<unknown> = Promise.resolve();

  /** Run tasks strictly in submission order, even when callers don't await. */
  run<T>(task: () => Promise<T>): Promise<T> {
    const next = this.chain.then(task, task);
    this.chain = next.catch(() => undefined);
    return next;
  }
}

export class SessionClient {
  readonly queue = new CommandQueue();
  session: SessionSummary | null = null;

  constructor(readonly baseUrl: string) {}

  private url(path: string): string {
    return `${this.baseUrl.replace(/\/$/, '')}${path}`;
  }

  async presets(): Promise<Record<string, PresetInfo>> {
    return expectJson(await fetch(this.url('/presets')));
  }

  async create(options: CreateOptions = {}): Promise<SessionSummary> {
    return this.queue.run(async () => {
      const resp = await fetch(this.url('/sessions'), {
        method: 'POST',
        headers: { 'content-type': 'application/json' },
        body: JSON.stringify(options),
      });
      this.session = (await expectJson(resp)) as SessionSummary;
      return this.session;
    });
  }

  async summary(): Promise<SessionSummary> {
    const id = this.requireId();
    const resp = await fetch(this.url(`/sessions/${id}`));
    this.session = (await expectJson(resp)) as SessionSummary;
    return this.session;
  }

  async advance(steps: number): Promise<StepEvent[]> {
    const id = this.requireId();
    return this.queue.run(async () => {
      const resp = await fetch(this.url(`/sessions/${id}/advance`), {
        method: 'POST',
        headers: { 'content-type': 'application/json' },
        body: JSON.stringify({ steps }),
      });
      const body = await expectJson(resp);
      return body.events as StepEvent[];
    });
  }

  async inject(preset: string): Promise<void>;
  async inject(patch: Record<string, unknown>): Promise<void>;
  async inject(arg: string | Record<string, unknown>): Promise<void> {
    const id = this.requireId();
    const body = typeof arg === 'string' ? { preset: arg } : { patch: arg };
    await this.queue.run(async () => {
      const resp = await fetch(this.url(`/sessions/${id}/inject`), {
        method: 'POST',
        headers: { 'content-type': 'application/json' },
        body: JSON.stringify(body),
      });
      await expectJson(resp);
    });
  }

  async close(): Promise<void> {
    if (this.session) {
      await fetch(this.url(`/sessions/${this.session.id}`), { method: 'DELETE' });
      this.session = null;
    }
  }

  /**
   * Follow the event stream from event index `since`. The service always
   * sends a snapshot first, so a reconnecting subscriber can rebuild the
   * exact state it would have had from a continuous subscription.
   */
  async *stream(since = 0, follow = true): AsyncGenerator<StreamMessage> {
    const id = this.requireId();
    const resp = await fetch(
      this.url(`/sessions/${id}/stream?since=${since}&follow=${follow}`),
    );
    if (!resp.ok || resp.body === null) {
      throw new ServiceError(resp.status, 'stream unavailable');
    }
    for await (const msg of readNdjson(resp.body)) {
      yield msg as StreamMessage;
    }
  }

  private requireId(): string {
    if (!this.session) {
      throw new Error('no live session; call create() first');
    }
    return this.session.id;
  }
}
