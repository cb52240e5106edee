"""Asynchronous coupling iteration: delay schedules, a deterministic
virtual-time simulator, and a thread-based concurrent executor.

The asynchronous update keeps the global interface solve exact while
letting every patch reaction lag behind by a bounded number of steps:

    p_{j+1} = p_j + omega * r_j,
    r_j = -( complement reaction at u_j
             + sum_s scatter of the patch-s reaction computed at u_{j - sigma(s,j)} )

with ages sigma(s,j) <= D, sigma never skipping values (a patch that is
not refreshed at step j carries sigma(s,j) = sigma(s,j-1) + 1), and a
synchronous warm-up sweep at j = 0 so every reaction exists before any
stale combination is formed.

Two executions of the same semantics are provided.  The *simulator* walks
virtual time with an explicit :class:`DelaySchedule`; it is deterministic
and is the canonical definition of the iteration.  The *concurrent
executor* runs one thread per rank (one for the global model, one per
patch group) that exchange data through one-sided :class:`WindowCell`
windows; delays then come from real scheduling, are observed rather than
prescribed, and the iterate sequence is not reproducible run to run, only
its limit is.
"""

from __future__ import annotations

import threading
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .coupling import CouplingScenario, interface_reaction
from .errors import DivergenceError, LivelockError, ScheduleError
from .solvers import (DIVERGENCE_FACTOR, IterationRecord, SolveReport,
                      stop_threshold)

__all__ = ["DelaySchedule", "AsyncStep", "AsyncTrace", "WindowCell",
           "partition_by_delay", "run_async_simulated",
           "run_async_concurrent", "run_sync_concurrent"]


# ---------------------------------------------------------------------------
# delay schedules


@dataclass
class DelaySchedule:
    """Ages sigma(s, j) for every patch, bounded by ``max_delay``.

    Kinds: "all-zero" (degenerates to the synchronous iteration),
    "deterministic-table" (explicit age table, validated), and
    "random-bounded" (per-step Bernoulli refresh with probability
    ``update_prob``, forced whenever the age would exceed the bound).
    The complement, when the scenario has one, is always fresh and is not
    part of the table.
    """

    kind: str
    max_delay: int
    patch_ids: tuple[int, ...]
    has_complement: bool = False
    table: np.ndarray | None = None
    seed: int | None = None
    update_prob: float = 0.5
    _rows: list[np.ndarray] = field(default_factory=list, repr=False)
    _rng: np.random.Generator | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("all-zero", "deterministic-table",
                             "random-bounded"):
            raise ScheduleError(f"unknown schedule kind {self.kind!r}")
        if self.max_delay < 0:
            raise ScheduleError("max_delay must be non-negative")
        if not self.patch_ids:
            raise ScheduleError("schedule needs at least one patch")
        if self.kind == "deterministic-table":
            if self.table is None:
                raise ScheduleError("deterministic-table needs a table")
            table = np.asarray(self.table, dtype=np.int64)
            if table.ndim != 2 or table.shape[1] != len(self.patch_ids):
                raise ScheduleError("table must be (steps, n_patches)")
            self._validate_table(table)
            self.table = table
        if self.kind == "random-bounded":
            if self.seed is None:
                raise ScheduleError("random-bounded needs a seed")
            if not 0.0 < self.update_prob <= 1.0:
                raise ScheduleError("update_prob must lie in (0, 1]")
            self._rng = np.random.default_rng(self.seed)
            self._rows.append(np.zeros(len(self.patch_ids), dtype=np.int64))

    def _validate_table(self, table: np.ndarray):
        if np.any(table[0] != 0):
            raise ScheduleError("ages at step 0 must all be zero "
                                "(warm-up sweep)")
        if np.any((table < 0) | (table > self.max_delay)):
            raise ScheduleError(
                f"table holds an age outside [0, {self.max_delay}]")
        grew = table[1:] - table[:-1]
        if np.any((table[1:] != 0) & (grew != 1)):
            raise ScheduleError("a skipped age: sigma(s,j) must be 0 or "
                                "sigma(s,j-1) + 1")

    @classmethod
    def all_zero(cls, patch_ids, has_complement: bool = False
                 ) -> "DelaySchedule":
        return cls(kind="all-zero", max_delay=0,
                   patch_ids=tuple(patch_ids), has_complement=has_complement)

    @classmethod
    def random_bounded(cls, patch_ids, max_delay: int, seed: int,
                       update_prob: float = 0.5,
                       has_complement: bool = False) -> "DelaySchedule":
        return cls(kind="random-bounded", max_delay=max_delay,
                   patch_ids=tuple(patch_ids), has_complement=has_complement,
                   seed=seed, update_prob=update_prob)

    @classmethod
    def from_table(cls, patch_ids, max_delay: int, table,
                   has_complement: bool = False) -> "DelaySchedule":
        return cls(kind="deterministic-table", max_delay=max_delay,
                   patch_ids=tuple(patch_ids), has_complement=has_complement,
                   table=np.asarray(table))

    def ages(self, j: int) -> np.ndarray:
        """Ages of all patches at step j (row of the sigma table)."""
        if j < 0:
            raise ScheduleError("negative step")
        if self.kind == "all-zero" or j == 0:
            return np.zeros(len(self.patch_ids), dtype=np.int64)
        if self.kind == "deterministic-table":
            if j >= len(self.table):
                raise ScheduleError(f"table exhausted at step {j}")
            return self.table[j]
        while len(self._rows) <= j:
            prev = self._rows[-1]
            fresh = self._rng.random(len(prev)) < self.update_prob
            aged = prev + 1
            fresh |= aged > self.max_delay  # forced refresh at the bound
            self._rows.append(np.where(fresh, 0, aged))
        return self._rows[j]


def partition_by_delay(schedule: DelaySchedule, j: int) -> list[list[int]]:
    """Split subdomain ids by age at step j: slot k holds those with
    sigma = k.  The complement (id 0) sits in slot 0 when present."""
    ages = schedule.ages(j)
    slots: list[list[int]] = [[] for _ in range(schedule.max_delay + 1)]
    if schedule.has_complement:
        slots[0].append(0)
    for sid, age in zip(schedule.patch_ids, ages):
        slots[int(age)].append(sid)
    return slots


# ---------------------------------------------------------------------------
# trace records


@dataclass(frozen=True)
class AsyncStep:
    """Per-step view: ages per patch and cumulative solve counts per rank.

    Rank 0 is the global model (it owns the complement reaction); patch
    ranks are keyed by subdomain id.
    """

    index: int
    sigma: dict[int, int]
    residual_norm: float
    omega: float
    solves: dict[int, int]


@dataclass
class AsyncTrace:
    steps: list[AsyncStep]
    rank_ids: tuple[int, ...]


# ---------------------------------------------------------------------------
# virtual-time simulator


def _check_solver_args(omega: float, tol: float, max_iter: int):
    if omega <= 0:
        raise ValueError("omega must be positive")
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    if max_iter < 0:
        raise ValueError("max_iter must be non-negative")


def run_async_simulated(scenario: CouplingScenario, omega: float,
                        schedule: DelaySchedule, tol: float = 1e-8,
                        max_iter: int = 10000) -> SolveReport:
    """Walk the asynchronous iteration in virtual time.

    Step j refreshes exactly the patches the schedule ages at 0 and reuses
    the cached reactions of the others; the complement is recomputed every
    step.  An all-zero schedule reproduces the synchronous fixed-omega
    iteration operation for operation.
    """
    _check_solver_args(omega, tol, max_iter)
    if tuple(schedule.patch_ids) != scenario.patch_ids:
        raise ScheduleError("schedule patch ids do not match the scenario")
    if schedule.has_complement != (scenario.complement is not None):
        raise ScheduleError("schedule and scenario disagree about the "
                            "complement")

    p = np.zeros(scenario.gamma_dim)
    cache: dict[int, np.ndarray] = {}
    history: list[IterationRecord] = []
    steps: list[AsyncStep] = []
    patch_solves = {sid: 0 for sid in scenario.patch_ids}
    converged = False
    r0 = 0.0
    t0 = time.perf_counter()
    u = np.zeros(scenario.gamma_dim)

    for j in range(max_iter + 1):
        u = scenario.solve_interface(p)
        ages = schedule.ages(j)
        for sid, age in zip(schedule.patch_ids, ages):
            if age == 0:
                cache[sid] = interface_reaction(scenario, sid, u)
                patch_solves[sid] += 1
        acc = np.zeros(scenario.gamma_dim)
        for sid in scenario.subdomain_ids:
            if sid == 0:
                acc += interface_reaction(scenario, 0, u)
            else:
                acc += cache[sid]
        r = -acc
        rn = float(np.linalg.norm(r))
        if j == 0:
            r0 = rn
            threshold = stop_threshold(scenario, tol, r0)
        history.append(IterationRecord(index=j, p_gamma=p.copy(), residual=r,
                                       residual_norm=rn, omega=omega,
                                       wall_time=time.perf_counter() - t0))
        solves = {0: j + 1}
        solves.update(patch_solves)
        steps.append(AsyncStep(index=j,
                               sigma={sid: int(a) for sid, a
                                      in zip(schedule.patch_ids, ages)},
                               residual_norm=rn, omega=omega, solves=solves))
        if rn <= threshold:
            converged = True
            break
        if rn > DIVERGENCE_FACTOR * r0:
            raise DivergenceError(
                f"residual grew to {rn:.3e} (>= 1e6 * ||r_0||) at "
                f"step {j}", history)
        p = p + omega * r

    trace = AsyncTrace(steps=steps,
                       rank_ids=(0,) + scenario.patch_ids)
    return SolveReport(converged=converged, history=history,
                       final_u_gamma=u, total_global_solves=len(history),
                       patch_solves=dict(patch_solves), variant="async-sim",
                       trace=trace)


# ---------------------------------------------------------------------------
# one-sided windows


class WindowCell:
    """Versioned single-writer cell emulating a one-sided RMA window.

    ``put`` swaps in a read-only copy of the payload under a lock and bumps
    the version; ``read`` returns the current (version, payload, meta)
    triple after verifying the payload checksum, so a torn or corrupted
    write can never be observed silently.  Versions are strictly monotone.
    """

    def __init__(self, name: str = "window"):
        self.name = name
        self._lock = threading.Lock()
        self._version = 0
        self._payload: np.ndarray | None = None
        self._meta: dict = {}
        self._crc = 0

    def put(self, payload: np.ndarray, **meta) -> int:
        arr = np.array(payload, dtype=float, copy=True)
        arr.setflags(write=False)
        crc = zlib.adler32(arr.tobytes())
        with self._lock:
            self._version += 1
            self._payload = arr
            self._meta = meta
            self._crc = crc
            return self._version

    def read(self) -> tuple[int, np.ndarray | None, dict]:
        with self._lock:
            version, payload = self._version, self._payload
            meta, crc = self._meta, self._crc
        if payload is not None and zlib.adler32(payload.tobytes()) != crc:
            raise RuntimeError(f"window {self.name}: checksum mismatch "
                               "(torn read)")
        return version, payload, meta

    @property
    def version(self) -> int:
        with self._lock:
            return self._version


# ---------------------------------------------------------------------------
# concurrent executors


def _patch_groups(patch_ids: tuple[int, ...],
                  rank_count: int | None) -> list[list[int]]:
    if rank_count is None:
        rank_count = 1 + len(patch_ids)
    if rank_count < 2:
        raise ValueError("need at least one global and one patch rank")
    workers = min(rank_count - 1, len(patch_ids))
    groups: list[list[int]] = [[] for _ in range(workers)]
    for i, sid in enumerate(patch_ids):
        groups[i % workers].append(sid)
    return groups


class _PatchWorkerState:
    __slots__ = ("solves", "last_version", "error")

    def __init__(self, patch_ids):
        self.solves = {sid: 0 for sid in patch_ids}
        self.last_version = {sid: 0 for sid in patch_ids}
        self.error: BaseException | None = None


def _patch_reaction_local(scenario: CouplingScenario, sid: int,
                          trace: np.ndarray) -> np.ndarray:
    """Reaction of one patch under its local interface trace (pre-scatter)."""
    j = scenario.transfer_ops[sid]
    cond = scenario.condensed_fine[sid]
    if j is None:
        return cond.schur @ trace - cond.rhs
    lam = cond.schur @ (j @ trace) - cond.rhs
    return j.T @ lam


def run_async_concurrent(scenario: CouplingScenario, omega: float,
                         tol: float = 1e-8, max_iter: int = 10000,
                         rank_count: int | None = None, *,
                         always_recompute: bool = True,
                         patch_sleep: dict[int, float] | None = None,
                         watchdog: float = 10.0) -> SolveReport:
    """Threaded asynchronous run exchanging data through window cells.

    The global rank publishes per-patch interface traces and keeps
    iterating on whatever reactions the patch ranks have put back, fresh
    or not; patch ranks re-solve continuously (``always_recompute``) or
    only on a new trace version.  ``patch_sleep`` injects an artificial
    per-solve delay for a subset of patches, which is how tests model rank
    imbalance.  A watchdog aborts with :class:`LivelockError` when no
    reaction version advances for ``watchdog`` seconds.

    A residual assembled from stale reactions can dip below the tolerance
    without the trace being anywhere near the coupled solution, so when
    the running residual passes the test the global rank recomputes every
    patch reaction at the current trace and only stops if that confirmed
    residual passes too; those confirmation solves are included in the
    reported per-patch counts.
    """
    _check_solver_args(omega, tol, max_iter)
    patch_sleep = patch_sleep or {}
    groups = _patch_groups(scenario.patch_ids, rank_count)

    u_cells = {sid: WindowCell(f"trace[{sid}]") for sid in scenario.patch_ids}
    q_cells = {sid: WindowCell(f"reaction[{sid}]")
               for sid in scenario.patch_ids}
    stop_cell = WindowCell("stop")
    stop_cell.put(np.array([0.0]))

    states = [_PatchWorkerState(group) for group in groups]

    def patch_loop(group: list[int], state: _PatchWorkerState):
        try:
            while True:
                _, flag, _ = stop_cell.read()
                if flag is not None and flag[0]:
                    return
                did_work = False
                for sid in group:
                    version, trace, meta = u_cells[sid].read()
                    if trace is None:
                        continue
                    if always_recompute or version != state.last_version[sid]:
                        local = _patch_reaction_local(scenario, sid, trace)
                        q_cells[sid].put(local, source_iter=meta["iter"])
                        state.solves[sid] += 1
                        state.last_version[sid] = version
                        did_work = True
                        delay = patch_sleep.get(sid, 0.0)
                        if delay:
                            time.sleep(delay)
                time.sleep(0 if did_work else 5e-5)
        except BaseException as err:  # surfaced by the global loop
            state.error = err

    threads = [threading.Thread(target=patch_loop, args=(g, s), daemon=True)
               for g, s in zip(groups, states)]
    for t in threads:
        t.start()

    def raise_worker_errors():
        for state in states:
            if state.error is not None:
                stop_cell.put(np.array([1.0]))
                raise state.error

    def snapshot_solves(j: int) -> dict[int, int]:
        out = {0: j + 1}
        for state in states:
            out.update(state.solves)
        return out

    p = np.zeros(scenario.gamma_dim)
    history: list[IterationRecord] = []
    steps: list[AsyncStep] = []
    converged = False
    r0 = 0.0
    t0 = time.perf_counter()
    u = scenario.solve_interface(p)
    confirm_solves = {sid: 0 for sid in scenario.patch_ids}

    def confirmed_residual_norm(u_now: np.ndarray) -> float:
        acc = np.zeros(scenario.gamma_dim)
        for sid in scenario.subdomain_ids:
            if sid == 0:
                acc += interface_reaction(scenario, 0, u_now)
            else:
                acc += interface_reaction(scenario, sid, u_now)
                confirm_solves[sid] += 1
        return float(np.linalg.norm(acc))

    try:
        # Warm-up: publish the initial trace and wait until every patch has
        # contributed once; only then is the stale combination well defined.
        for sid in scenario.patch_ids:
            u_cells[sid].put(u[scenario.assembly_ops[sid]], iter=0)
        deadline = time.monotonic() + watchdog
        while any(q_cells[sid].version == 0 for sid in scenario.patch_ids):
            raise_worker_errors()
            if time.monotonic() > deadline:
                raise LivelockError("no patch contributed a reaction "
                                    f"within {watchdog} s")
            time.sleep(5e-5)

        last_versions = {sid: 0 for sid in scenario.patch_ids}
        for j in range(max_iter + 1):
            u = scenario.solve_interface(p)
            for sid in scenario.patch_ids:
                u_cells[sid].put(u[scenario.assembly_ops[sid]], iter=j)

            # Pacing: a global step must consume at least one reaction it
            # has not seen before, otherwise nothing distinguishes step
            # j+1 from step j and the observed delays grow without bound.
            if j > 0:
                deadline = time.monotonic() + watchdog
                while not any(q_cells[sid].version > last_versions[sid]
                              for sid in scenario.patch_ids):
                    raise_worker_errors()
                    if time.monotonic() > deadline:
                        raise LivelockError("no reaction version advanced "
                                            f"for {watchdog} s")
                    time.sleep(2e-5)

            raise_worker_errors()
            acc = np.zeros(scenario.gamma_dim)
            if scenario.complement is not None:
                acc += interface_reaction(scenario, 0, u)
            sigma: dict[int, int] = {}
            for sid in scenario.patch_ids:
                version, local, meta = q_cells[sid].read()
                out = np.zeros(scenario.gamma_dim)
                out[scenario.assembly_ops[sid]] = local
                acc += out
                sigma[sid] = max(j - int(meta["source_iter"]), 0)
                last_versions[sid] = version

            r = -acc
            rn = float(np.linalg.norm(r))
            if j == 0:
                r0 = rn
                threshold = stop_threshold(scenario, tol, r0)
            history.append(IterationRecord(
                index=j, p_gamma=p.copy(), residual=r, residual_norm=rn,
                omega=omega, wall_time=time.perf_counter() - t0))
            steps.append(AsyncStep(index=j, sigma=sigma, residual_norm=rn,
                                   omega=omega, solves=snapshot_solves(j)))
            if rn <= threshold and confirmed_residual_norm(u) <= threshold:
                converged = True
                break
            if rn > DIVERGENCE_FACTOR * r0:
                raise DivergenceError(
                    f"residual grew to {rn:.3e} (>= 1e6 * ||r_0||) at "
                    f"step {j}", history)
            p = p + omega * r
            time.sleep(0)  # yield so patch ranks keep pace
    finally:
        stop_cell.put(np.array([1.0]))
        for t in threads:
            t.join(timeout=5.0)

    raise_worker_errors()
    patch_solves: dict[int, int] = {}
    for state in states:
        patch_solves.update(state.solves)
    for sid, count in confirm_solves.items():
        patch_solves[sid] += count
    trace = AsyncTrace(steps=steps, rank_ids=(0,) + scenario.patch_ids)
    return SolveReport(converged=converged, history=history,
                       final_u_gamma=u, total_global_solves=len(history),
                       patch_solves=patch_solves, variant="async-concurrent",
                       trace=trace)


def run_sync_concurrent(scenario: CouplingScenario, omega: float = 1.0,
                        tol: float = 1e-8, max_iter: int = 10000,
                        rank_count: int | None = None,
                        relaxation: str = "fixed") -> SolveReport:
    """Barrier-synchronized threaded run.

    Every iteration runs the three phases publish-trace / patch-solve /
    reduce behind barriers, so the iterate sequence coincides with
    :func:`glocal.solvers.richardson_sync` operation for operation; it
    exists to show the window plumbing does not perturb the numbers.
    """
    _check_solver_args(omega, tol, max_iter)
    if relaxation not in ("fixed", "aitken"):
        raise ValueError(f"unknown relaxation {relaxation!r}")
    from .solvers import aitken_update  # local import to avoid a cycle

    groups = _patch_groups(scenario.patch_ids, rank_count)
    u_cells = {sid: WindowCell(f"trace[{sid}]") for sid in scenario.patch_ids}
    q_cells = {sid: WindowCell(f"reaction[{sid}]")
               for sid in scenario.patch_ids}
    stop_cell = WindowCell("stop")
    stop_cell.put(np.array([0.0]))
    barrier = threading.Barrier(len(groups) + 1)
    states = [_PatchWorkerState(group) for group in groups]

    def patch_loop(group: list[int], state: _PatchWorkerState):
        try:
            while True:
                barrier.wait()  # A: traces published
                for sid in group:
                    _, trace, meta = u_cells[sid].read()
                    local = _patch_reaction_local(scenario, sid, trace)
                    q_cells[sid].put(local, source_iter=meta["iter"])
                    state.solves[sid] += 1
                barrier.wait()  # B: reactions published
                barrier.wait()  # C: stop flag decided
                _, flag, _ = stop_cell.read()
                if flag[0]:
                    return
        except threading.BrokenBarrierError:
            return
        except BaseException as err:
            state.error = err
            barrier.abort()

    threads = [threading.Thread(target=patch_loop, args=(g, s), daemon=True)
               for g, s in zip(groups, states)]
    for t in threads:
        t.start()

    aitken = relaxation == "aitken"
    w = 1.0 if aitken else float(omega)
    p = np.zeros(scenario.gamma_dim)
    history: list[IterationRecord] = []
    r_prev: np.ndarray | None = None
    converged = False
    failure: BaseException | None = None
    r0 = 0.0
    t0 = time.perf_counter()
    u = np.zeros(scenario.gamma_dim)

    try:
        for j in range(max_iter + 1):
            u = scenario.solve_interface(p)
            for sid in scenario.patch_ids:
                u_cells[sid].put(u[scenario.assembly_ops[sid]], iter=j)
            barrier.wait()  # A
            barrier.wait()  # B
            acc = np.zeros(scenario.gamma_dim)
            for sid in scenario.subdomain_ids:
                if sid == 0:
                    acc += interface_reaction(scenario, 0, u)
                else:
                    _, local, _ = q_cells[sid].read()
                    out = np.zeros(scenario.gamma_dim)
                    out[scenario.assembly_ops[sid]] = local
                    acc += out
            r = -acc
            rn = float(np.linalg.norm(r))
            if j == 0:
                r0 = rn
                threshold = stop_threshold(scenario, tol, r0)
            history.append(IterationRecord(
                index=j, p_gamma=p.copy(), residual=r, residual_norm=rn,
                omega=w, wall_time=time.perf_counter() - t0))
            stop = rn <= threshold
            diverged = rn > DIVERGENCE_FACTOR * r0
            last_round = stop or diverged or j == max_iter
            stop_cell.put(np.array([1.0 if last_round else 0.0]))
            barrier.wait()  # C
            if stop:
                converged = True
                break
            if diverged:
                raise DivergenceError(
                    f"residual grew to {rn:.3e} (>= 1e6 * ||r_0||) at "
                    f"iteration {j}", history)
            if last_round:
                break
            if aitken and r_prev is not None:
                w = aitken_update(w, r, r_prev)
            p = p + w * r
            r_prev = r
    except threading.BrokenBarrierError as err:
        failure = err
    finally:
        stop_cell.put(np.array([1.0]))
        barrier.abort()
        for t in threads:
            t.join(timeout=5.0)

    for state in states:
        if state.error is not None:
            raise state.error
    if failure is not None:
        raise failure

    patch_solves: dict[int, int] = {}
    for state in states:
        patch_solves.update(state.solves)
    return SolveReport(converged=converged, history=history,
                       final_u_gamma=u, total_global_solves=len(history),
                       patch_solves=patch_solves, variant="sync-concurrent")
