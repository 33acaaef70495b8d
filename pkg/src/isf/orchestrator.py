"""Launch and supervise store/producer/consumer process trees on one machine.

A "virtual node" is a process group scoped by address: co-located mode gives
every node its own store and points that node's ranks at it; clustered mode
gives stores dedicated nodes and hands every rank the full shard map.
"""

from __future__ import annotations

import json
import os
import signal
import subprocess
import sys
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from .client import ADDR_ENV, SHARD_MAP_ENV
from .reproducers import WorkloadSpec
from .timing import merge_csvs

READY_TIMEOUT_S = 30.0
TERM_GRACE_S = 5.0


class PlanError(Exception):
    """Invalid deployment plan (schema or topology)."""


_PLAN_FIELDS = {"mode", "nodes", "ranks_per_node", "db_cores", "shards",
                "consumer_ranks_per_node", "base_port", "workload", "seed", "max_bytes"}


@dataclass
class DeploymentPlan:
    mode: str
    nodes: int
    ranks_per_node: int
    base_port: int
    workload: WorkloadSpec
    db_cores: int | None = None
    shards: int | None = None
    consumer_ranks_per_node: int = 0
    seed: int = 0
    max_bytes: int | None = None

    def validate(self) -> None:
        if self.mode not in ("colocated", "clustered"):
            raise PlanError(f"mode must be colocated|clustered, got {self.mode!r}")
        if self.nodes < 1:
            raise PlanError("nodes must be >= 1")
        if self.ranks_per_node < 1:
            raise PlanError("ranks_per_node must be >= 1")
        if self.consumer_ranks_per_node < 0:
            raise PlanError("consumer_ranks_per_node must be >= 0")
        if self.mode == "colocated" and self.shards is not None:
            raise PlanError("colocated plans must not set shards")
        if self.mode == "clustered" and (self.shards is None or self.shards < 1):
            raise PlanError("clustered plans require shards >= 1")
        if self.consumer_ranks_per_node:
            if self.ranks_per_node % self.consumer_ranks_per_node != 0:
                raise PlanError("ranks_per_node must be divisible by consumer_ranks_per_node")
        n_stores = self.nodes if self.mode == "colocated" else self.shards
        ports = [self.base_port + i for i in range(n_stores)]
        if len(set(ports)) != len(ports):
            raise PlanError("duplicate ports in plan")
        if self.base_port < 1024 or ports[-1] >= 65536:
            raise PlanError(f"port range {ports[0]}..{ports[-1]} out of bounds")
        try:
            self.workload.validate()
        except ValueError as exc:
            raise PlanError(f"workload: {exc}") from None

    def store_addresses(self) -> list[str]:
        n = self.nodes if self.mode == "colocated" else (self.shards or 0)
        return [f"127.0.0.1:{self.base_port + i}" for i in range(n)]

    def total_producer_ranks(self) -> int:
        return self.nodes * self.ranks_per_node

    def total_consumer_ranks(self) -> int:
        return self.nodes * self.consumer_ranks_per_node

    def to_dict(self) -> dict:
        d = {
            "mode": self.mode, "nodes": self.nodes, "ranks_per_node": self.ranks_per_node,
            "base_port": self.base_port, "workload": self.workload.to_dict(),
            "consumer_ranks_per_node": self.consumer_ranks_per_node, "seed": self.seed,
        }
        if self.db_cores is not None:
            d["db_cores"] = self.db_cores
        if self.shards is not None:
            d["shards"] = self.shards
        if self.max_bytes is not None:
            d["max_bytes"] = self.max_bytes
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DeploymentPlan":
        unknown = set(d) - _PLAN_FIELDS
        if unknown:
            raise PlanError(f"unknown plan fields: {sorted(unknown)}")
        for required in ("mode", "nodes", "ranks_per_node", "base_port", "workload"):
            if required not in d:
                raise PlanError(f"plan missing required field '{required}'")
        try:
            workload = WorkloadSpec.from_dict(d["workload"])
        except (TypeError, ValueError) as exc:
            raise PlanError(f"workload: {exc}") from None
        plan = cls(
            mode=d["mode"], nodes=d["nodes"], ranks_per_node=d["ranks_per_node"],
            base_port=d["base_port"], workload=workload,
            db_cores=d.get("db_cores"), shards=d.get("shards"),
            consumer_ranks_per_node=d.get("consumer_ranks_per_node", 0),
            seed=d.get("seed", 0), max_bytes=d.get("max_bytes"),
        )
        plan.validate()
        return plan


def plan_from_file(path: str | Path) -> DeploymentPlan:
    """Parse and validate a plan file; unknown fields are rejected."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise PlanError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise PlanError(f"{path}: plan must be a JSON object")
    try:
        return DeploymentPlan.from_dict(raw)
    except PlanError as exc:
        raise PlanError(f"{path}: {exc}") from None


@dataclass
class ProcessEntry:
    role: str  # store | producer | consumer | infer
    node: int
    rank: int  # shard index for stores, global rank otherwise
    pid: int
    status: str = "running"  # running | ok | failed | killed
    exit_code: int | None = None
    env: dict[str, str] = field(default_factory=dict)
    log: str = ""
    csv: str | None = None

    def to_dict(self) -> dict:
        return {"role": self.role, "node": self.node, "rank": self.rank, "pid": self.pid,
                "status": self.status, "exit_code": self.exit_code, "env": self.env,
                "log": self.log, "csv": self.csv}


@dataclass
class RunManifest:
    run_id: str
    plan: DeploymentPlan
    artifact_dir: Path
    processes: list[ProcessEntry] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"run_id": self.run_id, "plan": self.plan.to_dict(),
                "artifact_dir": str(self.artifact_dir),
                "processes": [p.to_dict() for p in self.processes]}

    def write(self) -> Path:
        path = self.artifact_dir / "manifest.json"
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


class _Child:
    """One supervised subprocess with a log-draining thread."""

    def __init__(self, entry: ProcessEntry, proc: subprocess.Popen, log_path: Path):
        self.entry = entry
        self.proc = proc
        self.log_path = log_path
        self.ready = threading.Event()  # store READY handshake
        self.up = threading.Event()  # rank UP barrier announcement
        self._drain = threading.Thread(target=self._drain_loop, daemon=True)
        self._drain.start()

    def _drain_loop(self) -> None:
        with open(self.log_path, "w") as out:
            for line in self.proc.stdout:
                out.write(line)
                if line.startswith("READY "):
                    self.ready.set()
                    out.flush()
                elif line.startswith("UP"):
                    self.up.set()
                    out.flush()

    def release(self) -> None:
        """Send the GO line releasing the start barrier."""
        try:
            if self.proc.stdin is not None:
                self.proc.stdin.write("GO\n")
                self.proc.stdin.flush()
        except (OSError, ValueError):
            pass

    def join_drain(self) -> None:
        self._drain.join(timeout=5)


class Launcher:
    """Runs one DeploymentPlan: stores first (READY handshake), then ranks."""

    def __init__(self, plan: DeploymentPlan, out_dir: str | Path, run_id: str | None = None):
        plan.validate()
        self.plan = plan
        self.run_id = run_id or f"run-{time.strftime('%Y%m%d-%H%M%S')}-{uuid.uuid4().hex[:6]}"
        self.artifact_dir = Path(out_dir) / self.run_id
        self.raw_dir = self.artifact_dir / "raw"
        self.log_dir = self.artifact_dir / "logs"
        self.manifest = RunManifest(self.run_id, plan, self.artifact_dir)
        self._children: list[_Child] = []
        self._stores: list[_Child] = []
        self._clients: list[_Child] = []

    # -- spawning --------------------------------------------------------------

    def _spawn(self, role: str, node: int, rank: int, cmd: list[str],
               env_extra: dict[str, str], csv: str | None = None) -> _Child:
        env = dict(os.environ)
        env.update(env_extra)
        log_path = self.log_dir / f"{role}-{node}-{rank}.log"
        proc = subprocess.Popen(
            cmd, stdout=subprocess.PIPE, stderr=subprocess.STDOUT,
            stdin=subprocess.DEVNULL if role == "store" else subprocess.PIPE,
            text=True, env=env, start_new_session=True,
        )
        entry = ProcessEntry(role, node, rank, proc.pid, env=env_extra,
                             log=str(log_path), csv=csv)
        child = _Child(entry, proc, log_path)
        self.manifest.processes.append(entry)
        self._children.append(child)
        return child

    def _store_cmd(self, addr: str) -> list[str]:
        cmd = [sys.executable, "-m", "isf.cli.store", "--bind", addr]
        if self.plan.max_bytes is not None:
            cmd += ["--max-bytes", str(self.plan.max_bytes)]
        if self.plan.db_cores is not None:
            cmd += ["--workers", str(self.plan.db_cores),
                    "--cpus", ",".join(str(c) for c in range(self.plan.db_cores))]
        return cmd

    def _rank_env(self, node: int) -> dict[str, str]:
        addrs = self.plan.store_addresses()
        if self.plan.mode == "colocated":
            return {ADDR_ENV: addrs[node]}
        return {SHARD_MAP_ENV: ",".join(addrs)}

    def _workload_path(self) -> Path:
        path = self.artifact_dir / "workload.json"
        with open(path, "w") as fh:
            json.dump(self.plan.workload.to_dict(), fh, indent=2, sort_keys=True)
        return path

    def launch(self) -> RunManifest:
        """Start stores, confirm READY, then start all ranks; abort on failure."""
        for d in (self.artifact_dir, self.raw_dir, self.log_dir):
            d.mkdir(parents=True, exist_ok=True)
        workload_path = self._workload_path()
        addrs = self.plan.store_addresses()

        for i, addr in enumerate(addrs):
            # co-located: store i shares node i with its ranks; clustered:
            # stores occupy dedicated virtual nodes after the rank nodes
            node = i if self.plan.mode == "colocated" else self.plan.nodes + i
            child = self._spawn("store", node, i, self._store_cmd(addr), {})
            self._stores.append(child)
        deadline = time.monotonic() + READY_TIMEOUT_S
        for child in self._stores:
            remaining = max(0.0, deadline - time.monotonic())
            if not child.ready.wait(timeout=remaining):
                self.kill_all()
                self._finalize_statuses()
                self.manifest.write()
                raise RuntimeError(
                    f"store {child.entry.rank} failed readiness within {READY_TIMEOUT_S}s "
                    f"(see {child.log_path})"
                )

        workload = self.plan.workload
        role = {"transfer": "producer", "train_feed": "producer",
                "inference": "infer"}[workload.mode]
        for node in range(self.plan.nodes):
            env = self._rank_env(node)
            for r in range(self.plan.ranks_per_node):
                rank = node * self.plan.ranks_per_node + r
                csv = self.raw_dir / f"{role}-{node}-{rank}.csv"
                cmd = [sys.executable, "-m", f"isf.cli.{role}",
                       "--spec", str(workload_path), "--rank", str(rank),
                       "--run-id", self.run_id, "--seed", str(self.plan.seed),
                       "--csv", str(csv),
                       "--num-ranks", str(self.plan.total_producer_ranks()),
                       "--start-delay-ms", str(self._start_delay_ms(node, rank))]
                if role == "infer" and workload.inline:
                    cmd.append("--inline")
                self._clients.append(self._spawn(role, node, rank, cmd, env, csv=str(csv)))
            for c in range(self.plan.consumer_ranks_per_node):
                crank = node * self.plan.consumer_ranks_per_node + c
                csv = self.raw_dir / f"consumer-{node}-{crank}.csv"
                producers = self._assigned_producers(node, c)
                cmd = [sys.executable, "-m", "isf.cli.consumer",
                       "--spec", str(workload_path), "--rank", str(crank),
                       "--run-id", self.run_id, "--seed", str(self.plan.seed),
                       "--csv", str(csv),
                       "--producers", ",".join(str(p) for p in producers)]
                self._clients.append(self._spawn("consumer", node, crank, cmd, env, csv=str(csv)))

        # start barrier: wait until every rank's interpreter is up and
        # connected, then release them together (the spawn storm must not
        # overlap the measured loops)
        barrier_deadline = time.monotonic() + READY_TIMEOUT_S + 2 * len(self._clients)
        for child in self._clients:
            while not child.up.is_set():
                if child.proc.poll() is not None:
                    break  # early exit (config error); barrier proceeds without it
                if time.monotonic() > barrier_deadline:
                    break
                time.sleep(0.01)
        for child in self._clients:
            child.release()

        self.manifest.write()
        return self.manifest

    def _assigned_producers(self, node: int, consumer_idx: int) -> list[int]:
        """Fixed assignment: each consumer owns a contiguous slice of its node's ranks."""
        per_consumer = self.plan.ranks_per_node // self.plan.consumer_ranks_per_node
        start = node * self.plan.ranks_per_node + consumer_idx * per_consumer
        return list(range(start, start + per_consumer))

    def _start_delay_ms(self, node: int, rank: int) -> int:
        """De-phase loop starts so virtual nodes emulate independent machines.

        Real nodes run on disjoint hardware; on one shared machine, perfectly
        synchronized iteration bursts across nodes would measure core
        stealing instead of framework behavior. Co-located ranks of one node
        still start (and burst) together; clustered ranks spread over one
        sleep period like independently drifting clients.
        """
        sleep_ms = self.plan.workload.sleep_ms
        if self.plan.mode == "colocated":
            if self.plan.nodes <= 1:
                return 0
            return node * (sleep_ms // self.plan.nodes)
        total = max(1, self.plan.total_producer_ranks())
        return (rank * sleep_ms) // total

    # -- supervision -----------------------------------------------------------

    def await_completion(self, timeout_s: float = 600.0) -> dict:
        """Reap clients then stores, merge CSVs, write the final manifest."""
        deadline = time.monotonic() + timeout_s
        timed_out = False
        for child in self._clients:
            remaining = max(0.1, deadline - time.monotonic())
            try:
                child.proc.wait(timeout=remaining)
            except subprocess.TimeoutExpired:
                timed_out = True
                break
        store_info: list[dict] = []
        if timed_out:
            self.kill_all()
        else:
            # snapshot shard telemetry while stores are still up, then stop
            # them last, after every client has exited
            store_info = self._collect_store_info()
            for child in self._stores:
                self._terminate(child)
        self._finalize_statuses(killed_clients=timed_out)
        for child in self._children:
            child.join_drain()

        csvs = sorted(p for p in self.raw_dir.glob("*.csv"))
        merged_rows = 0
        if csvs:
            merged_rows = merge_csvs(list(csvs), self.artifact_dir / "timings.csv")
        self.manifest.write()

        failed = [p for p in self.manifest.processes if p.status in ("failed", "killed")]
        summary = {
            "run_id": self.run_id,
            "ok": not failed and not timed_out,
            "timed_out": timed_out,
            "failed": [f"{p.role}-{p.node}-{p.rank}: {p.status} ({p.exit_code})" for p in failed],
            "merged_rows": merged_rows,
            "artifact_dir": str(self.artifact_dir),
            "store_info": store_info,
        }
        with open(self.artifact_dir / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2)
        return summary

    def _collect_store_info(self) -> list[dict]:
        from .client import ClientConfig, ClientError, connect

        out = []
        for addr in self.plan.store_addresses():
            try:
                with connect(ClientConfig(mode="colocated", address=addr,
                                          max_attempts=2, backoff_ms=50)) as handle:
                    info = dict(handle.info())
            except ClientError as exc:
                info = {"error": str(exc)}
            info["address"] = addr
            out.append(info)
        return out

    def _terminate(self, child: _Child) -> None:
        if child.proc.poll() is None:
            child.proc.terminate()
            try:
                child.proc.wait(timeout=TERM_GRACE_S)
            except subprocess.TimeoutExpired:
                child.proc.kill()
                child.proc.wait()

    def kill_all(self) -> None:
        for child in reversed(self._children):
            if child.proc.poll() is None:
                try:
                    os.killpg(os.getpgid(child.proc.pid), signal.SIGKILL)
                except (ProcessLookupError, PermissionError):
                    pass
                child.proc.wait()

    def _finalize_statuses(self, killed_clients: bool = False) -> None:
        for child in self._children:
            code = child.proc.poll()
            e = child.entry
            if code is None:
                e.status = "running"
            elif e.role == "store":
                # stores are terminated by the supervisor; clean exits and
                # SIGTERM both count as ok
                e.status = "ok" if code in (0, -signal.SIGTERM) else (
                    "killed" if code == -signal.SIGKILL else "failed")
                e.exit_code = code
            else:
                if code == 0:
                    e.status = "ok"
                elif code < 0:
                    e.status = "killed"
                else:
                    e.status = "failed"
                e.exit_code = code

    def live_pids(self) -> list[int]:
        """Pids from the manifest that are still alive (should be [] after await)."""
        import psutil

        alive = []
        for p in self.manifest.processes:
            try:
                proc = psutil.Process(p.pid)
                if proc.is_running() and proc.status() != psutil.STATUS_ZOMBIE:
                    alive.append(p.pid)
            except psutil.NoSuchProcess:
                continue
        return alive


def run_plan(plan: DeploymentPlan, out_dir: str | Path, run_id: str | None = None,
             timeout_s: float = 600.0) -> dict:
    """launch + await_completion with tree cleanup on any error."""
    launcher = Launcher(plan, out_dir, run_id)
    try:
        launcher.launch()
        return launcher.await_completion(timeout_s=timeout_s)
    except BaseException:
        launcher.kill_all()
        raise
