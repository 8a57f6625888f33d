"""HTTP front door: workflow CRUD, run control, the eligibility hook, reports,
and read-only share links.

Authorization model: there is no account system; a request either comes from
the requester (no token) or presents a share token, which grants read-only
access and nothing else. The eligibility hook is the one worker-facing
endpoint; it authenticates with a per-run signed token that the engine embeds
in task payloads at translate time, so third parties cannot probe assignment
state.

Input validation is strict everywhere: unknown fields are rejected, mirroring
the workflow file format.
"""

from __future__ import annotations

import json
import secrets
import threading
from pathlib import Path
from typing import Any

from fastapi import FastAPI, Header, Query, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from .engine import Engine, RunRejected, StepOutcome
from .model import (
    WorkflowFormatError,
    unit_from_dict,
    validate_workflow,
    workflow_from_dict,
    workflow_to_dict,
)
from .platforms.filebased import FileAdapter
from .runner import Toggles, report_for_run, run_simulation
from .platforms.sim import PopulationProfile
from .scheduling import SchedulerState, SystemClock, on_tick
from .store import Store
from .workers import IdentityError, WorkerManager

API_VERSION = 1


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"error": {"code": code, "message": message}, "apiVersion": API_VERSION},
    )


class WorkflowIn(BaseModel):
    model_config = ConfigDict(extra="allow")  # full document checked by the strict parser


class ValidateIn(BaseModel):
    model_config = ConfigDict(extra="forbid")
    unitSchema: list[str] | None = None


class RunIn(BaseModel):
    model_config = ConfigDict(extra="forbid")
    adapter: str = "file"
    units: list[dict[str, Any]] = Field(default_factory=list)
    toggles: dict[str, bool] = Field(default_factory=dict)
    seed: int = 0
    version: int | None = None
    profile: dict[str, Any] | None = None
    horizonHours: float = 168.0


class EligibilityIn(BaseModel):
    model_config = ConfigDict(extra="forbid")
    platformWorkerId: str
    fingerprint: str
    country: str = "ZZ"
    blockId: str | None = None


class QuotaEditIn(BaseModel):
    model_config = ConfigDict(extra="forbid")
    buckets: list[dict[str, Any]] | None = None
    maxSharePerBucket: float | None = None
    enforcement: str | None = None
    restMaxShare: float | None = None


class _FileRunDriver(threading.Thread):
    """Background loop for runs on external adapters (wall-clock time)."""

    def __init__(self, engine: Engine, store: Store, run_id: str, poll_seconds: float = 1.0):
        super().__init__(daemon=True, name=f"run-{run_id}")
        self.engine = engine
        self.store = store
        self.run_id = run_id
        self.poll_seconds = poll_seconds
        self.stop_flag = threading.Event()
        self.sched_state = SchedulerState(run_id=run_id, active=True)

    def run(self) -> None:
        from .engine import _schedule_from_doc

        while not self.stop_flag.is_set():
            run = self.store.get_run(self.run_id)
            if run is None or run["status"] in ("completed", "failed", "cancelled"):
                return
            schedule = None
            if run["toggles"].get("schedule", True):
                schedule = _schedule_from_doc(run.get("schedule"))
            commands = on_tick(
                self.sched_state,
                schedule,
                SystemClock().now(),
                judgment_count=self.store.count_judgments(self.run_id),
            )
            if commands:
                self.engine.apply_commands(self.run_id, commands)
            if run["status"] == "running":
                outcome = self.engine.execute_next(self.run_id)
                if outcome == StepOutcome.RUN_COMPLETE:
                    return
                if outcome == StepOutcome.ADVANCED:
                    continue
            self.stop_flag.wait(self.poll_seconds)


class ServiceState:
    def __init__(self, store: Store, data_dir: str | Path):
        self.store = store
        self.data_dir = Path(data_dir)
        self.workers = WorkerManager(store)
        self.adapters: dict[str, Any] = {}
        self.engine = Engine(store, self.adapters, self.workers)
        self.drivers: dict[str, _FileRunDriver] = {}
        self.lock = threading.Lock()

    def file_adapter(self) -> FileAdapter:
        if "file" not in self.adapters:
            self.adapters["file"] = FileAdapter(self.data_dir / "tasks")
        return self.adapters["file"]


def create_app(store: Store | None = None, data_dir: str | Path | None = None) -> FastAPI:
    store = store or Store(":memory:")
    data_dir = Path(data_dir) if data_dir else Path.cwd() / "crowdlab-data"
    state = ServiceState(store, data_dir)
    app = FastAPI(title="crowdlab", version=str(API_VERSION))
    app.state.crowdlab = state

    from fastapi.exceptions import RequestValidationError

    @app.exception_handler(RequestValidationError)
    async def invalid_input(request: Request, exc: RequestValidationError):
        detail = "; ".join(
            f"{'.'.join(str(loc) for loc in e['loc'])}: {e['msg']}" for e in exc.errors()
        )
        return _error(422, "invalid-input", detail)

    @app.middleware("http")
    async def share_token_guard(request: Request, call_next):
        token = request.headers.get("x-share-token")
        if token is not None:
            doc = store.get_share_token(token)
            if doc is None or doc.get("revoked"):
                return _error(403, "share-token-invalid", "unknown or revoked share token")
            if request.method not in ("GET", "HEAD"):
                return _error(403, "read-only", "share tokens grant read-only access")
        response = await call_next(request)
        return response

    # -- workflows ---------------------------------------------------------

    @app.post("/workflows", status_code=201)
    def create_workflow(doc: dict[str, Any]):
        try:
            wf = workflow_from_dict(doc)
        except WorkflowFormatError as exc:
            return _error(422, "workflow-format", str(exc))
        wf_id = wf.id or f"wf-{secrets.token_hex(4)}"
        latest = store.latest_workflow_version(wf_id)
        version = 1 if latest is None else latest + 1
        stored = dict(workflow_to_dict(wf))
        stored["id"] = wf_id
        stored["version"] = version
        store.put_workflow(wf_id, version, stored)
        return {"id": wf_id, "version": version, "apiVersion": API_VERSION}

    @app.get("/workflows")
    def list_workflows():
        return {"workflows": store.list_workflows(), "apiVersion": API_VERSION}

    @app.get("/workflows/{wf_id}")
    def get_workflow(wf_id: str, version: int | None = Query(default=None)):
        doc = store.get_workflow(wf_id, version)
        if doc is None:
            return _error(404, "unknown-workflow", f"no workflow {wf_id!r}")
        return doc

    @app.put("/workflows/{wf_id}")
    def put_workflow(wf_id: str, doc: dict[str, Any]):
        try:
            wf = workflow_from_dict(doc)
        except WorkflowFormatError as exc:
            return _error(422, "workflow-format", str(exc))
        latest = store.latest_workflow_version(wf_id)
        if latest is None:
            return _error(404, "unknown-workflow", f"no workflow {wf_id!r}; POST first")
        version = latest + 1
        stored = dict(workflow_to_dict(wf))
        stored["id"] = wf_id
        stored["version"] = version
        store.put_workflow(wf_id, version, stored)
        return {"id": wf_id, "version": version, "apiVersion": API_VERSION}

    @app.post("/workflows/{wf_id}/validate")
    def validate(wf_id: str, body: ValidateIn | None = None):
        doc = store.get_workflow(wf_id)
        if doc is None:
            return _error(404, "unknown-workflow", f"no workflow {wf_id!r}")
        wf = workflow_from_dict(doc)
        schema = set(body.unitSchema) if body and body.unitSchema else None
        result = validate_workflow(wf, schema)
        return {"ok": result.ok, "violations": list(result.violations)}

    # -- runs -----------------------------------------------------------------

    @app.post("/workflows/{wf_id}/runs", status_code=201)
    def launch_run(wf_id: str, body: RunIn):
        doc = store.get_workflow(wf_id, body.version)
        if doc is None:
            return _error(404, "unknown-workflow", f"no workflow {wf_id!r}")
        wf = workflow_from_dict(doc)
        try:
            units = [unit_from_dict(u) for u in body.units]
        except WorkflowFormatError as exc:
            return _error(422, "unit-format", str(exc))

        if body.adapter == "sim":
            profile = (
                PopulationProfile.from_json(json.dumps(body.profile))
                if body.profile
                else PopulationProfile(seed=body.seed)
            )
            if body.seed and not body.profile:
                profile.seed = body.seed
            try:
                result = run_simulation(
                    wf,
                    profile,
                    Toggles(**{k: bool(v) for k, v in body.toggles.items()})
                    if body.toggles
                    else Toggles(),
                    units=units,
                    horizon_hours=body.horizonHours,
                    store=store,
                )
            except RunRejected as exc:
                return _error(422, "workflow-invalid", "; ".join(exc.violations))
            return {"runId": result.run_id, "outcome": result.outcome}

        if body.adapter != "file":
            return _error(422, "unknown-adapter", f"adapter {body.adapter!r} not registered")
        state.file_adapter()
        try:
            run_id = state.engine.start_run(
                wf, units, adapter_id="file", toggles=body.toggles or None, seed=body.seed
            )
        except RunRejected as exc:
            return _error(422, "workflow-invalid", "; ".join(exc.violations))
        driver = _FileRunDriver(state.engine, store, run_id)
        with state.lock:
            state.drivers[run_id] = driver
        driver.start()
        return {"runId": run_id}

    def _get_run_or_error(run_id: str):
        run = store.get_run(run_id)
        if run is None:
            return None, _error(404, "unknown-run", f"no run {run_id!r}")
        return run, None

    @app.get("/runs/{run_id}")
    def run_status(run_id: str):
        run, err = _get_run_or_error(run_id)
        if err:
            return err
        cached = store.cache_keys(run_id)
        judgment_count = store.count_judgments(run_id)
        per_block = {}
        for bid, st in run["block_states"].items():
            per_block[bid] = {
                "status": "done" if bid in cached else st["status"],
                "attempts": st["attempt_count"],
                "published": st.get("handle") is not None,
            }
        counters = {k: v for k, v in store.kv_items(f"counters:{run_id}")}
        group_counts = {
            k.split(":", 1)[1]: v for k, v in counters.items() if k.startswith("group:")
        }
        assignments = store.snapshot(run_id).assignments
        per_group_assignments: dict[str, int] = {}
        for a in assignments.values():
            per_group_assignments[a["group_id"]] = per_group_assignments.get(a["group_id"], 0) + 1
        return {
            "runId": run_id,
            "workflowId": run["workflow_id"],
            "workflowVersion": run["workflow_version"],
            "status": run["status"],
            "startedAt": run["started_at"],
            "finishedAt": run["finished_at"],
            "blocks": per_block,
            "judgments": judgment_count,
            "groupJudgments": group_counts,
            "groupAssignments": per_group_assignments,
            "toggles": run["toggles"],
            "apiVersion": API_VERSION,
        }

    @app.post("/runs/{run_id}/pause")
    def pause(run_id: str):
        run, err = _get_run_or_error(run_id)
        if err:
            return err
        state.engine.pause_run(run_id, source="user")
        return {"runId": run_id, "status": store.get_run(run_id)["status"]}

    @app.post("/runs/{run_id}/resume")
    def resume(run_id: str):
        run, err = _get_run_or_error(run_id)
        if err:
            return err
        state.engine.unpause_run(run_id, source="user")
        return {"runId": run_id, "status": store.get_run(run_id)["status"]}

    @app.post("/runs/{run_id}/cancel")
    def cancel(run_id: str):
        run, err = _get_run_or_error(run_id)
        if err:
            return err
        state.engine.cancel_run(run_id)
        driver = state.drivers.get(run_id)
        if driver:
            driver.stop_flag.set()
        return {"runId": run_id, "status": store.get_run(run_id)["status"]}

    @app.post("/runs/{run_id}/eligibility")
    def eligibility(
        run_id: str,
        body: EligibilityIn,
        x_hook_token: str | None = Header(default=None),
    ):
        run, err = _get_run_or_error(run_id)
        if err:
            return err
        if x_hook_token != run.get("hook_token"):
            return _error(403, "hook-token-invalid", "missing or wrong eligibility hook token")
        try:
            decision = state.workers.decide_eligibility(
                run_id,
                body.platformWorkerId,
                body.fingerprint,
                body.country,
                body.blockId,
                now=SystemClock().now().isoformat(),
            )
        except IdentityError as exc:
            return _error(422, "identity-invalid", str(exc))
        except ValueError as exc:
            return _error(409, "run-not-accepting", str(exc))
        return {
            "action": decision.action,
            "group": decision.group_id,
            "reason": decision.reason,
            "message": decision.message,
        }

    @app.get("/runs/{run_id}/report")
    def report(run_id: str):
        run, err = _get_run_or_error(run_id)
        if err:
            return err
        return report_for_run(store, run_id)

    @app.get("/runs/{run_id}/audit")
    def audit(run_id: str, after: int = Query(default=0), limit: int = Query(default=200)):
        run, err = _get_run_or_error(run_id)
        if err:
            return err
        rows = store.audit_events(run_id, after_seq=after, limit=min(limit, 1000))
        next_cursor = rows[-1][0] if rows else after
        return {
            "events": [{"seq": seq, **doc} for seq, doc in rows],
            "nextCursor": next_cursor,
            "apiVersion": API_VERSION,
        }

    @app.get("/runs/{run_id}/schedule-state")
    def schedule_state(run_id: str):
        run, err = _get_run_or_error(run_id)
        if err:
            return err
        counters = dict(store.kv_items(f"counters:{run_id}"))
        window_counts = {k: v for k, v in counters.items() if k.startswith("window:")}
        return {
            "runId": run_id,
            "status": run["status"],
            "pause": run.get("pause"),
            "schedule": run.get("schedule"),
            "windowCounts": window_counts,
            "pendingQuotaEdit": store.kv_get(f"quota-edits:{run_id}", "pending"),
        }

    @app.put("/runs/{run_id}/quotas")
    def edit_quotas(run_id: str, body: QuotaEditIn):
        run, err = _get_run_or_error(run_id)
        if err:
            return err
        current = dict(run.get("quota") or {"buckets": [], "maxSharePerBucket": 1.0, "enforcement": "hard-block"})
        if body.buckets is not None:
            current["buckets"] = body.buckets
        if body.maxSharePerBucket is not None:
            current["maxSharePerBucket"] = body.maxSharePerBucket
        if body.enforcement is not None:
            current["enforcement"] = body.enforcement
        if body.restMaxShare is not None:
            current["restMaxShare"] = body.restMaxShare
        with store.transact() as tx:
            tx.kv_put(f"quota-edits:{run_id}", "pending", current)
            tx.append_audit(
                run_id,
                {
                    "event": "quota-edit-staged",
                    "quota": current,
                    "at": SystemClock().now().isoformat(),
                },
            )
        return {"runId": run_id, "staged": current, "appliesAt": "next-checkpoint"}

    # -- sharing -----------------------------------------------------------------

    @app.post("/workflows/{wf_id}/share", status_code=201)
    def share(wf_id: str):
        doc = store.get_workflow(wf_id)
        if doc is None:
            return _error(404, "unknown-workflow", f"no workflow {wf_id!r}")
        token = secrets.token_urlsafe(32)  # 256 bits
        store.put_share_token(
            token,
            {"workflow_id": wf_id, "scope": "read-only", "revoked": False,
             "created_at": SystemClock().now().isoformat()},
        )
        return {"token": token, "url": f"/shared/{token}"}

    @app.delete("/share/{token}")
    def revoke_share(token: str):
        doc = store.get_share_token(token)
        if doc is None:
            return _error(404, "unknown-share-token", "no such share token")
        doc["revoked"] = True
        store.put_share_token(token, doc)
        return {"revoked": True}

    @app.get("/shared/{token}")
    def shared_view(token: str):
        doc = store.get_share_token(token)
        if doc is None or doc.get("revoked"):
            return _error(403, "share-token-invalid", "unknown or revoked share token")
        wf = store.get_workflow(doc["workflow_id"])
        return {"workflow": wf, "scope": "read-only"}

    @app.get("/healthz")
    def health():
        return {"ok": True, "apiVersion": API_VERSION}

    @app.get("/openapi-description")
    def api_description():
        return app.openapi()

    return app


def serve(
    port: int = 8008,
    store_path: str = ":memory:",
    data_dir: str | None = None,
    log_level: str = "warning",
) -> None:
    import uvicorn

    app = create_app(Store(store_path), data_dir)
    uvicorn.run(app, host="127.0.0.1", port=port, log_level=log_level)
