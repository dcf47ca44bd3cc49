// Dashboard wiring: one session, one stream subscription, controls that only
// touch the documented service endpoints.

import { DashboardState } from './buffers.js';
import { drawChart } from './charts.js';
import { SessionClient } from './client.js';
import { layoutNodes, utilizationColor } from './layout.js';
import { SATURATION_THRESHOLD, type SnapshotMessage, type StepEvent } from './types.js';

const serverUrl = new URLSearchParams(location.search).get('server') ?? location.origin;

const state = new DashboardState();
const client = new SessionClient(serverUrl);
let streamAbort: AbortController | null = null;
let playTimer: number | null = null;

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el as T;
};

function setStatus(text: string, kind: 'ok' | 'warn' | 'err' = 'ok'): void {
  const el = $('status');
  el.textContent = text;
  el.className = `status ${kind}`;
}

function render(): void {
  if (!state.session) return;
  $('step-indicator').textContent = `step ${state.step + 1} / ${state.session.horizon}`;
  drawChart($('chart-demand') as HTMLCanvasElement, {
    title: 'destination demand / served per step',
    series: [
      { buffer: state.demand, color: '#4cc9f0', label: 'demand' },
      { buffer: state.served, color: '#80ed99', label: 'served' },
    ],
    annotations: state.annotations,
  });
  drawChart($('chart-stock') as HTMLCanvasElement, {
    title: 'destination on-hand stock',
    series: [{ buffer: state.destOnHand, color: '#80ed99', label: 'on hand' }],
    annotations: state.annotations,
  });
  drawChart($('chart-backlog') as HTMLCanvasElement, {
    title: 'destination backlog',
    series: [{ buffer: state.backlog, color: '#ef476f', label: 'backlog' }],
    annotations: state.annotations,
  });
  const palette = ['#f0a202', '#4cc9f0', '#b5179e', '#80ed99'];
  const utilSeries = state.lastMileEdges().flatMap((edge, i) => {
    const buffer = state.edgeUtilization.get(edge);
    return buffer ? [{ buffer, color: palette[i % palette.length], label: edge }] : [];
  });
  drawChart($('chart-util') as HTMLCanvasElement, {
    title: `last-mile edge utilization (band at ${SATURATION_THRESHOLD})`,
    series: utilSeries,
    threshold: SATURATION_THRESHOLD,
    yMax: 1.05,
    annotations: state.annotations,
  });
  drawChart($('chart-shock') as HTMLCanvasElement, {
    title: 'shared shock level',
    series: [{ buffer: state.shock, color: '#b5179e', label: 'G(t)' }],
    annotations: state.annotations,
  });
  renderNetwork();
}

function renderNetwork(): void {
  const canvas = $('network') as HTMLCanvasElement;
  const ctx = canvas.getContext('2d');
  if (!ctx || !state.session) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const pad = 34;
  const positions = new Map(
    layoutNodes(state.session).map((p) => [
      p.id,
      { x: pad + p.x * (canvas.width - 2 * pad), y: pad + p.y * (canvas.height - 2 * pad) },
    ]),
  );
  for (const edge of state.session.edges) {
    const a = positions.get(edge.from);
    const b = positions.get(edge.to);
    if (!a || !b) continue;
    const key = `${edge.from}->${edge.to}`;
    const util = state.edgeUtilization.get(key)?.last ?? 0;
    ctx.strokeStyle = utilizationColor(util);
    ctx.lineWidth = util >= SATURATION_THRESHOLD ? 3.5 : 1.5;
    ctx.beginPath();
    ctx.moveTo(a.x, a.y);
    ctx.lineTo(b.x, b.y);
    ctx.stroke();
  }
  ctx.font = '10px system-ui, sans-serif';
  for (const [id, pos] of positions) {
    const isDest = id === state.session.destination;
    ctx.fillStyle = isDest ? '#4cc9f0' : '#9fb3c8';
    ctx.beginPath();
    ctx.arc(pos.x, pos.y, isDest ? 6 : 4, 0, 2 * Math.PI);
    ctx.fill();
    ctx.fillText(id, pos.x + 6, pos.y - 4);
  }
}

async function subscribe(): Promise<void> {
  streamAbort?.abort();
  streamAbort = new AbortController();
  const since = state.eventCount;
  try {
    for await (const msg of client.stream(since)) {
      if (streamAbort.signal.aborted) return;
      if (msg.type === 'snapshot') {
        if (since === 0) {
          state.applySnapshot(msg as SnapshotMessage);
        } else {
          for (const ev of (msg as SnapshotMessage).events) state.applyEvent(ev);
        }
      } else if (msg.type === 'step') {
        state.applyEvent(msg as StepEvent);
      } else {
        setStatus('session reached its horizon', 'warn');
        break;
      }
      render();
    }
  } catch (err) {
    if (!streamAbort.signal.aborted) {
      setStatus('stream lost; reconnecting...', 'err');
      setTimeout(() => void subscribe(), 1000);
    }
    return;
  }
  // idle timeout on the server side: resubscribe to keep following
  if (!streamAbort.signal.aborted) {
    setTimeout(() => void subscribe(), 250);
  }
}

function setPlaying(on: boolean): void {
  state.playing = on;
  $('btn-play').textContent = on ? 'Pause' : 'Play';
  if (playTimer !== null) {
    clearInterval(playTimer);
    playTimer = null;
  }
  if (on) {
    playTimer = window.setInterval(() => {
      if (!state.session || state.step + 1 >= state.session.horizon) {
        setPlaying(false);
        return;
      }
      void client.advance(Math.max(1, Math.round(state.speed / 4))).catch((err) => {
        setStatus(String(err), 'err');
        setPlaying(false);
      });
    }, 250);
  }
}

async function boot(): Promise<void> {
  setStatus('creating session...');
  await client.create({});
  setStatus(`session ${client.session?.id} live`);
  void subscribe();

  const presets = await client.presets();
  const box = $('presets');
  for (const [name, info] of Object.entries(presets)) {
    const btn = document.createElement('button');
    btn.textContent = name.replace(/_/g, ' ');
    btn.title = info.description;
    btn.onclick = () => {
      void client.inject(name).then(
        () => setStatus(`injected ${name} at step ${state.step + 1}`, 'warn'),
        (err) => setStatus(String(err), 'err'),
      );
    };
    box.appendChild(btn);
  }

  $('btn-play').onclick = () => setPlaying(!state.playing);
  $('btn-step').onclick = () => void client.advance(1).catch((e) => setStatus(String(e), 'err'));
  ($('speed') as HTMLInputElement).oninput = (ev) => {
    state.speed = Number((ev.target as HTMLInputElement).value);
    $('speed-label').textContent = `${state.speed} steps/s`;
  };
  $('btn-surge-custom').onclick = () => {
    const mult = Number(($('surge-mult') as HTMLInputElement).value);
    void client.inject({ demand_multiplier: mult }).then(
      () => setStatus(`injected demand x${mult}`, 'warn'),
      (err) => setStatus(String(err), 'err'),
    );
  };
}

void boot().catch((err) => setStatus(String(err), 'err'));
