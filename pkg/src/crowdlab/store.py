"""Durable persistence behind a narrow interface.

Backed by an embedded SQLite database (file or in-memory). The contract, not
the storage technology, is what the rest of the system relies on:

* ``block-cache`` is write-once: first writer wins, losers learn the digest.
* ``judgments`` and ``audit`` are append-only; judgment appends are
  idempotent per (run, uid) so crash-replayed fetches cannot double-count.
* ``check_and_assign`` is a compare-and-set on a worker's per-run assignment;
  exactly one of N concurrent identical requests succeeds.
* ``transact()`` groups several operations into one atomic unit; every
  mutating transaction passes through the optional fault hook, which is how
  the crash-and-rerun harness kills the process at persistence boundaries.

All operations are safe under concurrent callers: a process-wide lock
serializes access to the single connection, and SQLite transactions make
each unit of work atomic against crashes.
"""

from __future__ import annotations

import hashlib
import json
import sqlite3
import threading
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator
from contextlib import contextmanager


class StoreError(Exception):
    pass


class SimulatedCrash(RuntimeError):
    """Raised by fault hooks to model the process dying at a boundary."""


_SCHEMA = """
CREATE TABLE IF NOT EXISTS workflows (
    id TEXT NOT NULL, version INTEGER NOT NULL, doc TEXT NOT NULL,
    PRIMARY KEY (id, version)
);
CREATE TABLE IF NOT EXISTS runs (
    run_id TEXT PRIMARY KEY, doc TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS block_cache (
    run_id TEXT NOT NULL, block_id TEXT NOT NULL, output TEXT NOT NULL,
    digest TEXT NOT NULL, produced_at TEXT NOT NULL,
    PRIMARY KEY (run_id, block_id)
);
CREATE TABLE IF NOT EXISTS workers (
    canonical_id TEXT PRIMARY KEY, doc TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS assignments (
    run_id TEXT NOT NULL, canonical_id TEXT NOT NULL, doc TEXT NOT NULL,
    PRIMARY KEY (run_id, canonical_id)
);
CREATE TABLE IF NOT EXISTS judgments (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    run_id TEXT NOT NULL, uid TEXT NOT NULL, doc TEXT NOT NULL,
    UNIQUE (run_id, uid)
);
CREATE TABLE IF NOT EXISTS audit_events (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    run_id TEXT NOT NULL, doc TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS share_tokens (
    token TEXT PRIMARY KEY, doc TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS kv (
    ns TEXT NOT NULL, key TEXT NOT NULL, doc TEXT NOT NULL,
    PRIMARY KEY (ns, key)
);
CREATE INDEX IF NOT EXISTS judgments_run ON judgments (run_id, seq);
CREATE INDEX IF NOT EXISTS audit_run ON audit_events (run_id, seq);
"""


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def digest_of(value: Any) -> str:
    return hashlib.sha256(canonical_json(value).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class PutOnceOutcome:
    ok: bool
    digest: str  # digest of the stored value (winner's, when ok is False)


@dataclass(frozen=True)
class RunSnapshot:
    """Consistent read view of one run; excludes writes after creation."""

    run: dict[str, Any] | None
    workflow: dict[str, Any] | None
    units: list[dict[str, Any]]
    cache: dict[str, dict[str, Any]]
    judgments: list[dict[str, Any]]
    audit: list[dict[str, Any]]
    assignments: dict[str, dict[str, Any]]
    counters: dict[str, Any] = field(default_factory=dict)


class Tx:
    """Operations available inside a transaction. Do not keep past commit."""

    def __init__(self, conn: sqlite3.Connection):
        self._conn = conn

    # -- kv ---------------------------------------------------------------
    def kv_get(self, ns: str, key: str) -> Any:
        row = self._conn.execute(
            "SELECT doc FROM kv WHERE ns = ? AND key = ?", (ns, key)
        ).fetchone()
        return None if row is None else json.loads(row[0])

    def kv_put(self, ns: str, key: str, value: Any) -> None:
        self._conn.execute(
            "INSERT INTO kv (ns, key, doc) VALUES (?, ?, ?) "
            "ON CONFLICT (ns, key) DO UPDATE SET doc = excluded.doc",
            (ns, key, canonical_json(value)),
        )

    def kv_delete(self, ns: str, key: str) -> None:
        self._conn.execute("DELETE FROM kv WHERE ns = ? AND key = ?", (ns, key))

    def kv_items(self, ns: str) -> list[tuple[str, Any]]:
        rows = self._conn.execute(
            "SELECT key, doc FROM kv WHERE ns = ? ORDER BY key", (ns,)
        ).fetchall()
        return [(k, json.loads(d)) for k, d in rows]

    # -- workflows (immutable versions) ------------------------------------
    def put_workflow(self, wf_id: str, version: int, doc: dict[str, Any]) -> None:
        try:
            self._conn.execute(
                "INSERT INTO workflows (id, version, doc) VALUES (?, ?, ?)",
                (wf_id, version, canonical_json(doc)),
            )
        except sqlite3.IntegrityError as exc:
            raise StoreError(f"workflow version exists: {wf_id} v{version}") from exc

    def get_workflow(self, wf_id: str, version: int | None = None) -> dict[str, Any] | None:
        if version is None:
            row = self._conn.execute(
                "SELECT doc FROM workflows WHERE id = ? ORDER BY version DESC LIMIT 1",
                (wf_id,),
            ).fetchone()
        else:
            row = self._conn.execute(
                "SELECT doc FROM workflows WHERE id = ? AND version = ?", (wf_id, version)
            ).fetchone()
        return None if row is None else json.loads(row[0])

    def latest_workflow_version(self, wf_id: str) -> int | None:
        row = self._conn.execute(
            "SELECT MAX(version) FROM workflows WHERE id = ?", (wf_id,)
        ).fetchone()
        return row[0]

    def list_workflows(self) -> list[dict[str, Any]]:
        rows = self._conn.execute(
            "SELECT id, MAX(version) FROM workflows GROUP BY id ORDER BY id"
        ).fetchall()
        return [{"id": r[0], "version": r[1]} for r in rows]

    # -- runs ---------------------------------------------------------------
    def put_run(self, run_id: str, doc: dict[str, Any]) -> None:
        self._conn.execute(
            "INSERT INTO runs (run_id, doc) VALUES (?, ?) "
            "ON CONFLICT (run_id) DO UPDATE SET doc = excluded.doc",
            (run_id, canonical_json(doc)),
        )

    def get_run(self, run_id: str) -> dict[str, Any] | None:
        row = self._conn.execute("SELECT doc FROM runs WHERE run_id = ?", (run_id,)).fetchone()
        return None if row is None else json.loads(row[0])

    def list_runs(self) -> list[str]:
        return [r[0] for r in self._conn.execute("SELECT run_id FROM runs ORDER BY run_id")]

    # -- block cache (write-once) --------------------------------------------
    def put_once(self, run_id: str, block_id: str, output: Any, produced_at: str) -> PutOnceOutcome:
        digest = digest_of(output)
        try:
            self._conn.execute(
                "INSERT INTO block_cache (run_id, block_id, output, digest, produced_at)"
                " VALUES (?, ?, ?, ?, ?)",
                (run_id, block_id, canonical_json(output), digest, produced_at),
            )
            return PutOnceOutcome(ok=True, digest=digest)
        except sqlite3.IntegrityError:
            row = self._conn.execute(
                "SELECT digest FROM block_cache WHERE run_id = ? AND block_id = ?",
                (run_id, block_id),
            ).fetchone()
            return PutOnceOutcome(ok=False, digest=row[0])

    def get_cache(self, run_id: str, block_id: str) -> dict[str, Any] | None:
        row = self._conn.execute(
            "SELECT output, digest, produced_at FROM block_cache"
            " WHERE run_id = ? AND block_id = ?",
            (run_id, block_id),
        ).fetchone()
        if row is None:
            return None
        return {"output": json.loads(row[0]), "digest": row[1], "produced_at": row[2]}

    def cache_keys(self, run_id: str) -> set[str]:
        rows = self._conn.execute(
            "SELECT block_id FROM block_cache WHERE run_id = ?", (run_id,)
        ).fetchall()
        return {r[0] for r in rows}

    # -- workers & assignments ------------------------------------------------
    def get_worker(self, canonical_id: str) -> dict[str, Any] | None:
        row = self._conn.execute(
            "SELECT doc FROM workers WHERE canonical_id = ?", (canonical_id,)
        ).fetchone()
        return None if row is None else json.loads(row[0])

    def put_worker(self, canonical_id: str, doc: dict[str, Any]) -> None:
        self._conn.execute(
            "INSERT INTO workers (canonical_id, doc) VALUES (?, ?) "
            "ON CONFLICT (canonical_id) DO UPDATE SET doc = excluded.doc",
            (canonical_id, canonical_json(doc)),
        )

    def all_workers(self) -> dict[str, dict[str, Any]]:
        rows = self._conn.execute("SELECT canonical_id, doc FROM workers").fetchall()
        return {r[0]: json.loads(r[1]) for r in rows}

    def try_assign(self, run_id: str, canonical_id: str, doc: dict[str, Any]) -> str:
        """First writer wins; returns "ok" or "conflict"."""
        try:
            self._conn.execute(
                "INSERT INTO assignments (run_id, canonical_id, doc) VALUES (?, ?, ?)",
                (run_id, canonical_id, canonical_json(doc)),
            )
            return "ok"
        except sqlite3.IntegrityError:
            return "conflict"

    def get_assignment(self, run_id: str, canonical_id: str) -> dict[str, Any] | None:
        row = self._conn.execute(
            "SELECT doc FROM assignments WHERE run_id = ? AND canonical_id = ?",
            (run_id, canonical_id),
        ).fetchone()
        return None if row is None else json.loads(row[0])

    def assignments_for_run(self, run_id: str) -> dict[str, dict[str, Any]]:
        rows = self._conn.execute(
            "SELECT canonical_id, doc FROM assignments WHERE run_id = ?", (run_id,)
        ).fetchall()
        return {r[0]: json.loads(r[1]) for r in rows}

    # -- judgments (append-only, idempotent per uid) ----------------------------
    def append_judgment(self, run_id: str, uid: str, doc: dict[str, Any]) -> bool:
        """Returns True when newly inserted, False when uid was already present."""
        try:
            self._conn.execute(
                "INSERT INTO judgments (run_id, uid, doc) VALUES (?, ?, ?)",
                (run_id, uid, canonical_json(doc)),
            )
            return True
        except sqlite3.IntegrityError:
            return False

    def update_judgment(self, run_id: str, uid: str, doc: dict[str, Any]) -> None:
        """Rewrite a row just inserted in this same transaction (flag fixup).

        Not part of the append-only contract: callers may only touch a uid
        they appended within the current transaction.
        """
        self._conn.execute(
            "UPDATE judgments SET doc = ? WHERE run_id = ? AND uid = ?",
            (canonical_json(doc), run_id, uid),
        )

    def judgments(self, run_id: str, after_seq: int = 0, limit: int | None = None) -> list[tuple[int, dict[str, Any]]]:
        q = "SELECT seq, doc FROM judgments WHERE run_id = ? AND seq > ? ORDER BY seq"
        args: tuple[Any, ...] = (run_id, after_seq)
        if limit is not None:
            q += " LIMIT ?"
            args = args + (limit,)
        return [(seq, json.loads(doc)) for seq, doc in self._conn.execute(q, args)]

    def count_judgments(self, run_id: str) -> int:
        row = self._conn.execute(
            "SELECT COUNT(*) FROM judgments WHERE run_id = ?", (run_id,)
        ).fetchone()
        return int(row[0])

    # -- audit (append-only) ------------------------------------------------
    def append_audit(self, run_id: str, doc: dict[str, Any]) -> None:
        self._conn.execute(
            "INSERT INTO audit_events (run_id, doc) VALUES (?, ?)",
            (run_id, canonical_json(doc)),
        )

    def audit_events(self, run_id: str, after_seq: int = 0, limit: int | None = None) -> list[tuple[int, dict[str, Any]]]:
        q = "SELECT seq, doc FROM audit_events WHERE run_id = ? AND seq > ? ORDER BY seq"
        args: tuple[Any, ...] = (run_id, after_seq)
        if limit is not None:
            q += " LIMIT ?"
            args = args + (limit,)
        return [(seq, json.loads(doc)) for seq, doc in self._conn.execute(q, args)]

    # -- share tokens ----------------------------------------------------------
    def put_share_token(self, token: str, doc: dict[str, Any]) -> None:
        self._conn.execute(
            "INSERT INTO share_tokens (token, doc) VALUES (?, ?) "
            "ON CONFLICT (token) DO UPDATE SET doc = excluded.doc",
            (token, canonical_json(doc)),
        )

    def get_share_token(self, token: str) -> dict[str, Any] | None:
        row = self._conn.execute(
            "SELECT doc FROM share_tokens WHERE token = ?", (token,)
        ).fetchone()
        return None if row is None else json.loads(row[0])


class Store:
    def __init__(self, path: str | Path = ":memory:"):
        self._path = str(path)
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(self._path, check_same_thread=False)
        self._conn.isolation_level = None  # explicit transaction control
        self._conn.execute("PRAGMA busy_timeout = 10000")
        if self._path != ":memory:":
            self._conn.execute("PRAGMA journal_mode = WAL")
            self._conn.execute("PRAGMA synchronous = NORMAL")
        self._conn.executescript(_SCHEMA)
        # Fault hook, test-only: called as hook(phase, op_index) with phase in
        # {"before-commit", "after-commit"} for every mutating transaction.
        self.fault_hook: Callable[[str, int], None] | None = None
        self._op_count = 0

    @property
    def path(self) -> str:
        return self._path

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    def abandon(self) -> None:
        """Model a process crash: drop the connection without committing."""
        self._conn.close()

    @contextmanager
    def transact(self) -> Iterator[Tx]:
        with self._lock:
            self._conn.execute("BEGIN IMMEDIATE")
            try:
                yield Tx(self._conn)
                self._op_count += 1
                n = self._op_count
                if self.fault_hook is not None:
                    self.fault_hook("before-commit", n)
                self._conn.execute("COMMIT")
                if self.fault_hook is not None:
                    self.fault_hook("after-commit", n)
            except BaseException:
                try:
                    self._conn.execute("ROLLBACK")
                except sqlite3.Error:
                    pass
                raise

    @contextmanager
    def read(self) -> Iterator[Tx]:
        """Read-only view; repeatable within the block."""
        with self._lock:
            self._conn.execute("BEGIN")
            try:
                yield Tx(self._conn)
            finally:
                self._conn.execute("ROLLBACK")

    # -- committing wrappers for common single operations -----------------------

    def put_workflow(self, wf_id: str, version: int, doc: dict[str, Any]) -> None:
        with self.transact() as tx:
            tx.put_workflow(wf_id, version, doc)

    def get_workflow(self, wf_id: str, version: int | None = None) -> dict[str, Any] | None:
        with self.read() as tx:
            return tx.get_workflow(wf_id, version)

    def latest_workflow_version(self, wf_id: str) -> int | None:
        with self.read() as tx:
            return tx.latest_workflow_version(wf_id)

    def list_workflows(self) -> list[dict[str, Any]]:
        with self.read() as tx:
            return tx.list_workflows()

    def put_run(self, run_id: str, doc: dict[str, Any]) -> None:
        with self.transact() as tx:
            tx.put_run(run_id, doc)

    def get_run(self, run_id: str) -> dict[str, Any] | None:
        with self.read() as tx:
            return tx.get_run(run_id)

    def list_runs(self) -> list[str]:
        with self.read() as tx:
            return tx.list_runs()

    def put_once(self, run_id: str, block_id: str, output: Any, produced_at: str) -> PutOnceOutcome:
        with self.transact() as tx:
            return tx.put_once(run_id, block_id, output, produced_at)

    def get_cache(self, run_id: str, block_id: str) -> dict[str, Any] | None:
        with self.read() as tx:
            return tx.get_cache(run_id, block_id)

    def cache_keys(self, run_id: str) -> set[str]:
        with self.read() as tx:
            return tx.cache_keys(run_id)

    def get_worker(self, canonical_id: str) -> dict[str, Any] | None:
        with self.read() as tx:
            return tx.get_worker(canonical_id)

    def check_and_assign(
        self,
        run_id: str,
        canonical_id: str,
        assignment: dict[str, Any],
        guard: dict[str, Any] | None = None,
    ) -> tuple[str, dict[str, Any] | None]:
        """Compare-and-set on the worker's per-run assignment.

        ``guard`` is the expected prior assignment (None = unassigned).
        Returns ("ok", stored) or ("conflict", existing).
        """
        with self.transact() as tx:
            existing = tx.get_assignment(run_id, canonical_id)
            if existing != guard:
                return "conflict", existing
            if guard is None:
                outcome = tx.try_assign(run_id, canonical_id, assignment)
                if outcome == "conflict":
                    return "conflict", tx.get_assignment(run_id, canonical_id)
            else:
                self._conn.execute(
                    "UPDATE assignments SET doc = ? WHERE run_id = ? AND canonical_id = ?",
                    (canonical_json(assignment), run_id, canonical_id),
                )
            return "ok", assignment

    def get_assignment(self, run_id: str, canonical_id: str) -> dict[str, Any] | None:
        with self.read() as tx:
            return tx.get_assignment(run_id, canonical_id)

    def judgments(self, run_id: str, after_seq: int = 0, limit: int | None = None) -> list[tuple[int, dict[str, Any]]]:
        with self.read() as tx:
            return tx.judgments(run_id, after_seq, limit)

    def count_judgments(self, run_id: str) -> int:
        with self.read() as tx:
            return tx.count_judgments(run_id)

    def append_audit(self, run_id: str, doc: dict[str, Any]) -> None:
        with self.transact() as tx:
            tx.append_audit(run_id, doc)

    def audit_events(self, run_id: str, after_seq: int = 0, limit: int | None = None) -> list[tuple[int, dict[str, Any]]]:
        with self.read() as tx:
            return tx.audit_events(run_id, after_seq, limit)

    def put_share_token(self, token: str, doc: dict[str, Any]) -> None:
        with self.transact() as tx:
            tx.put_share_token(token, doc)

    def get_share_token(self, token: str) -> dict[str, Any] | None:
        with self.read() as tx:
            return tx.get_share_token(token)

    def kv_get(self, ns: str, key: str) -> Any:
        with self.read() as tx:
            return tx.kv_get(ns, key)

    def kv_put(self, ns: str, key: str, value: Any) -> None:
        with self.transact() as tx:
            tx.kv_put(ns, key, value)

    def kv_items(self, ns: str) -> list[tuple[str, Any]]:
        with self.read() as tx:
            return tx.kv_items(ns)

    # -- snapshot -----------------------------------------------------------

    def snapshot(self, run_id: str) -> RunSnapshot:
        with self.read() as tx:
            run = tx.get_run(run_id)
            workflow = None
            if run is not None:
                workflow = tx.get_workflow(run["workflow_id"], run["workflow_version"])
            units = tx.kv_get("units", run_id) or []
            cache = {bid: tx.get_cache(run_id, bid) for bid in tx.cache_keys(run_id)}
            judgments = [doc for _, doc in tx.judgments(run_id)]
            audit = [doc for _, doc in tx.audit_events(run_id)]
            assignments = tx.assignments_for_run(run_id)
            counters = dict(tx.kv_items(f"counters:{run_id}"))
            return RunSnapshot(
                run=run,
                workflow=workflow,
                units=units,
                cache=cache,  # type: ignore[arg-type]
                judgments=judgments,
                audit=audit,
                assignments=assignments,
                counters=counters,
            )

    # -- integrity & archive --------------------------------------------------

    def integrity_check(self) -> list[str]:
        problems: list[str] = []
        with self._lock:
            row = self._conn.execute("PRAGMA integrity_check").fetchone()
            if row[0] != "ok":
                problems.append(f"sqlite integrity: {row[0]}")
            for table, col in (
                ("workflows", "doc"),
                ("runs", "doc"),
                ("block_cache", "output"),
                ("workers", "doc"),
                ("assignments", "doc"),
                ("judgments", "doc"),
                ("audit_events", "doc"),
                ("share_tokens", "doc"),
                ("kv", "doc"),
            ):
                for (doc,) in self._conn.execute(f"SELECT {col} FROM {table}"):
                    try:
                        json.loads(doc)
                    except json.JSONDecodeError:
                        problems.append(f"{table}: unparseable record")
            # write-once digests must match their stored output
            for output, digest in self._conn.execute("SELECT output, digest FROM block_cache"):
                if digest_of(json.loads(output)) != digest:
                    problems.append("block_cache: digest mismatch")
        return problems

    def export_run(self, run_id: str, archive_path: str | Path) -> None:
        """Write one run (workflow version, units, judgments, audit) as a zip."""
        snap = self.snapshot(run_id)
        if snap.run is None:
            raise StoreError(f"unknown run: {run_id}")
        with zipfile.ZipFile(archive_path, "w", zipfile.ZIP_DEFLATED) as zf:
            zf.writestr("run.json", canonical_json(snap.run))
            zf.writestr("workflow.json", canonical_json(snap.workflow))
            zf.writestr("units.json", canonical_json(snap.units))
            zf.writestr(
                "judgments.ndjson",
                "".join(canonical_json(j) + "\n" for j in snap.judgments),
            )
            zf.writestr(
                "audit.ndjson",
                "".join(canonical_json(a) + "\n" for a in snap.audit),
            )
            zf.writestr(
                "assignments.json",
                canonical_json(snap.assignments),
            )

    def import_run(self, archive_path: str | Path) -> str:
        with zipfile.ZipFile(archive_path) as zf:
            run = json.loads(zf.read("run.json"))
            workflow = json.loads(zf.read("workflow.json"))
            units = json.loads(zf.read("units.json"))
            judgments = [
                json.loads(line)
                for line in zf.read("judgments.ndjson").decode("utf-8").splitlines()
                if line.strip()
            ]
            audit = [
                json.loads(line)
                for line in zf.read("audit.ndjson").decode("utf-8").splitlines()
                if line.strip()
            ]
            assignments = json.loads(zf.read("assignments.json"))
        run_id = run["run_id"]
        with self.transact() as tx:
            if workflow is not None and tx.get_workflow(run["workflow_id"], run["workflow_version"]) is None:
                tx.put_workflow(run["workflow_id"], run["workflow_version"], workflow)
            tx.put_run(run_id, run)
            tx.kv_put("units", run_id, units)
            for i, j in enumerate(judgments):
                tx.append_judgment(run_id, j.get("uid", f"imported-{i}"), j)
            for a in audit:
                tx.append_audit(run_id, a)
            for cid, doc in assignments.items():
                tx.try_assign(run_id, cid, doc)
        return run_id
