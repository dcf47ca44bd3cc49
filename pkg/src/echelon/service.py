"""Session-oriented HTTP API for live rollouts: the stress-test UI backend.

A session wraps one simulation: create it, advance it in steps, inject
disruption knob patches mid-run, and follow per-step deltas over a
newline-delimited JSON stream. Structural parameters (topology, catalogue,
horizon) are immutable for a live session; only knobs whose mid-run change is
well-defined can be patched: demand multipliers on the remaining rate rows,
container-count scaling, and lead-time scaling.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException
from fastapi.responses import RedirectResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .config import ConfigError, config_from_dict, merge_patch
from .engine import Simulation

logger = logging.getLogger(__name__)

DESK_PROFILE = {
    "structural": {"items": 5, "horizon": 2000, "pipeline_multiplier": 7.0},
}

DISRUPTION_PRESETS: dict[str, dict] = {
    # magnitudes are implementation-defined; the trio mirrors the public demo
    "demand_surge": {
        "description": "Global demand intensity x2 from the current step onward",
        "patch": {"demand_multiplier": 2.0},
    },
    "lastmile_squeeze": {
        "description": "Container counts on the last-mile edges scaled to 0.3 (min 1)",
        "patch": {"container_count_scale": 0.3, "scope": "lastmile"},
    },
    "leadtime_blowout": {
        "description": "Source lead-time means x10 for all future orders",
        "patch": {"lead_time_scale": 10.0},
    },
}

_ALLOWED_PATCH_KEYS = {"demand_multiplier", "container_count_scale", "scope", "lead_time_scale"}


class CreateSessionRequest(BaseModel):
    config: dict | None = None          # full config document (desk profile if omitted)
    overrides: dict | None = None       # dotted-key overrides applied last
    desk_profile: bool = True


class AdvanceRequest(BaseModel):
    steps: int = 1


class InjectRequest(BaseModel):
    preset: str | None = None
    patch: dict | None = None


@dataclass
class Session:
    id: str
    sim: Simulation
    lock: threading.Lock = field(default_factory=threading.Lock)
    cond: threading.Condition = field(default_factory=threading.Condition)
    events: list[dict] = field(default_factory=list)
    injections: list[dict] = field(default_factory=list)
    pending_labels: list[str] = field(default_factory=list)
    item_demand: list[list[int]] = field(default_factory=list)
    item_backlog: list[list[int]] = field(default_factory=list)
    created: float = field(default_factory=time.time)
    last_access: float = field(default_factory=time.time)
    closed: bool = False

    @property
    def horizon(self) -> int:
        return self.sim.cfg.params.horizon

    def summary(self) -> dict:
        st = self.sim.state
        return {
            "id": self.id,
            "t": st.t,
            "horizon": self.horizon,
            "items": self.sim.C,
            "nodes": self.sim.node_ids,
            "destination": self.sim.dst_id,
            "backlog_total": int(st.backlog.sum()),
            "dest_on_hand": int(st.oh[self.sim.dst_row].sum()),
            "state_digest": st.digest(),
            "injections": self.injections,
            "edges": [{"from": e.src, "to": e.dst, "containers": e.containers,
                       "volume": e.volume, "transit": e.transit}
                      for e in self.sim.network.edges],
            "coords": {n.id: list(n.coords) for n in self.sim.network.nodes if n.coords},
            "tiers": {n.id: n.tier for n in self.sim.network.nodes},
        }

    def advance(self, steps: int) -> list[dict]:
        new_events = []
        with self.lock:
            for _ in range(steps):
                if self.sim.state.t >= self.horizon:
                    break
                rec = self.sim.step()
                util = self.sim.edge_utilization(rec.edge_placed)
                event = {
                    "type": "step",
                    "t": rec.t,
                    "demand": int(rec.demand.sum()),
                    "served": int(rec.served.sum()),
                    "new_backlog": int(rec.new_backlog.sum()),
                    "backlog_total": int(rec.backlog_end.sum()),
                    "dest_on_hand": int(rec.oh_end[self.sim.dst_row].sum()),
                    "in_transit": int(rec.it_total_end.sum()),
                    "shock": rec.shock_level,
                    "node_on_hand": {n: int(rec.oh_end[i].sum())
                                     for i, n in enumerate(self.sim.node_ids)},
                    "edge_utilization": {f"{u}->{v}": round(val, 6)
                                         for (u, v), val in util.items()},
                    "injections": self.pending_labels,
                }
                self.pending_labels = []
                self.item_demand.append(rec.demand.tolist())
                self.item_backlog.append(rec.backlog_end.tolist())
                new_events.append(event)
            with self.cond:
                self.events.extend(new_events)
                self.cond.notify_all()
        self.last_access = time.time()
        return new_events

    def inject(self, patch: dict, label: str) -> dict:
        unknown = set(patch) - _ALLOWED_PATCH_KEYS
        if unknown:
            raise HTTPException(
                status_code=422,
                detail=f"immutable or unknown fields {sorted(unknown)}; "
                       f"allowed: {sorted(_ALLOWED_PATCH_KEYS)}")
        with self.lock:
            effective_from = self.sim.state.t
            try:
                if "demand_multiplier" in patch:
                    self.sim.scale_future_intensity(float(patch["demand_multiplier"]))
                if "container_count_scale" in patch:
                    lastmile = patch.get("scope", "all") == "lastmile"
                    self.sim.scale_containers(float(patch["container_count_scale"]),
                                              lastmile_only=lastmile)
                if "lead_time_scale" in patch:
                    self.sim.scale_lead_times(float(patch["lead_time_scale"]))
            except ValueError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
            entry = {"step": effective_from, "label": label, "patch": patch}
            self.injections.append(entry)
            self.pending_labels = self.pending_labels + [label]
        self.last_access = time.time()
        return entry


class SessionService:
    def __init__(self, session_cap: int = 32, idle_ttl: float = 3600.0,
                 max_steps_per_advance: int = 10000):
        self.session_cap = session_cap
        self.idle_ttl = idle_ttl
        self.max_steps_per_advance = max_steps_per_advance
        self.sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def _evict_idle(self) -> None:
        now = time.time()
        for sid in [s for s, sess in self.sessions.items()
                    if now - sess.last_access > self.idle_ttl]:
            logger.info("evicting idle session %s", sid)
            self._close(sid)

    def _close(self, sid: str) -> None:
        sess = self.sessions.pop(sid, None)
        if sess:
            sess.closed = True
            with sess.cond:
                sess.cond.notify_all()

    def create(self, req: CreateSessionRequest) -> Session:
        with self._lock:
            self._evict_idle()
            if len(self.sessions) >= self.session_cap:
                raise HTTPException(status_code=429, detail="session cap reached")
            doc = req.config or {}
            if req.desk_profile:
                doc = merge_patch(DESK_PROFILE, doc)
            try:
                cfg = config_from_dict(doc, req.overrides)
                sim = Simulation.from_config(cfg)
            except (ConfigError, ValueError) as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from exc
            sess = Session(id=uuid.uuid4().hex[:12], sim=sim)
            self.sessions[sess.id] = sess
            logger.info("session %s created (C=%d, T=%d, seed=%d)", sess.id,
                        cfg.params.items, cfg.params.horizon, cfg.params.seed)
            return sess

    def get(self, sid: str) -> Session:
        sess = self.sessions.get(sid)
        if sess is None:
            raise HTTPException(status_code=404, detail=f"unknown session {sid}")
        sess.last_access = time.time()
        return sess


def create_app(service: SessionService | None = None, static_dir: str | None = None) -> FastAPI:
    service = service or SessionService()
    app = FastAPI(title="echelon session service", version="0.1.0")
    app.state.service = service

    @app.get("/presets")
    def presets() -> dict:
        return DISRUPTION_PRESETS

    @app.post("/sessions", status_code=201)
    def create_session(req: CreateSessionRequest) -> dict:
        sess = service.create(req)
        return sess.summary()

    @app.get("/sessions/{sid}")
    def get_session(sid: str) -> dict:
        return service.get(sid).summary()

    @app.delete("/sessions/{sid}", status_code=204)
    def delete_session(sid: str) -> None:
        service.get(sid)
        service._close(sid)

    @app.post("/sessions/{sid}/advance")
    def advance(sid: str, req: AdvanceRequest) -> dict:
        sess = service.get(sid)
        if req.steps < 1:
            raise HTTPException(status_code=422, detail="steps must be >= 1")
        if sess.sim.state.t >= sess.horizon:
            raise HTTPException(status_code=409, detail="session is at its horizon")
        steps = min(req.steps, service.max_steps_per_advance)
        events = sess.advance(steps)
        return {"events": events, "t": sess.sim.state.t}

    @app.post("/sessions/{sid}/inject")
    def inject(sid: str, req: InjectRequest) -> dict:
        sess = service.get(sid)
        if (req.preset is None) == (req.patch is None):
            raise HTTPException(status_code=422,
                                detail="provide exactly one of 'preset' or 'patch'")
        if req.preset is not None:
            preset = DISRUPTION_PRESETS.get(req.preset)
            if preset is None:
                raise HTTPException(status_code=422, detail=f"unknown preset {req.preset!r}")
            return sess.inject(dict(preset["patch"]), req.preset)
        return sess.inject(dict(req.patch), "custom")

    @app.get("/sessions/{sid}/item/{label}")
    def item_series(sid: str, label: str) -> dict:
        sess = service.get(sid)
        from .dataset import item_labels
        labels = item_labels(sess.sim.C)
        if label not in labels:
            raise HTTPException(status_code=404, detail=f"unknown item {label}")
        i = labels.index(label)
        return {
            "item": label,
            "demand": [row[i] for row in sess.item_demand],
            "backlog": [row[i] for row in sess.item_backlog],
        }

    @app.get("/sessions/{sid}/stream")
    def stream(sid: str, since: int = 0, follow: bool = True, timeout: float = 30.0):
        sess = service.get(sid)

        def generate():
            # snapshot first: summary plus the event history the subscriber missed
            with sess.cond:
                history = list(sess.events[since:])
            snapshot = {"type": "snapshot", "session": sess.summary(), "events": history}
            yield json.dumps(snapshot) + "\n"
            cursor = len(history) + since
            if not follow:
                return
            deadline = time.time() + timeout
            while not sess.closed and time.time() < deadline:
                with sess.cond:
                    if cursor >= len(sess.events):
                        sess.cond.wait(timeout=0.5)
                    chunk = list(sess.events[cursor:])
                if chunk:
                    deadline = time.time() + timeout
                    for event in chunk:
                        yield json.dumps(event) + "\n"
                    cursor += len(chunk)
                if sess.sim.state.t >= sess.horizon:
                    break
            yield json.dumps({"type": "end", "t": sess.sim.state.t}) + "\n"

        return StreamingResponse(generate(), media_type="application/x-ndjson")

    if static_dir:
        app.mount("/app", StaticFiles(directory=static_dir, html=True), name="app")

        @app.get("/", include_in_schema=False)
        def index():
            return RedirectResponse(url="/app/")

    return app


def serve(host: str = "127.0.0.1", port: int = 8000, static_dir: str | None = None,
          session_cap: int = 32) -> None:
    import uvicorn

    app = create_app(SessionService(session_cap=session_cap), static_dir=static_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")
