"""Synchronous coupling solvers and the monolithic reference.

The iteration works on the interface load p carried by the global model:

    u_j = S_G^{-1} (b_G + p_j)          (global solve)
    r_j = -(sum of subdomain reactions at u_j)
    p_{j+1} = p_j + omega_j r_j

starting from p_0 = 0.  With a fixed relaxation this is a Richardson
iteration on an SPD-similar operator; the ``aitken`` mode rescales omega
each step from the last two residuals.  Convergence is declared when
||r_j|| <= tol * ||r_0||, with an absolute floor tied to the global load
so that an initial residual at roundoff level (fine model identical to
the global one) counts as converged immediately; a residual above
1e6 * ||r_0|| aborts with the history attached.

``monolithic_reference`` assembles the coupled problem directly (all fine
patches plus the complement, glued by the transfer maps) and solves it
sparsely in one shot.  It shares no code with the condensation path, which
makes it the oracle the iterative variants are checked against.
"""

from __future__ import annotations

from dataclasses import dataclass
from time import perf_counter

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coupling import CouplingScenario, interface_reaction
from .errors import DivergenceError, StagnationError

__all__ = ["IterationRecord", "SolveReport", "ReferenceSolution",
           "global_solve", "compute_residual", "aitken_update",
           "stop_threshold", "richardson_sync", "monolithic_reference"]

DIVERGENCE_FACTOR = 1e6
OMEGA_CAP = 10.0
OMEGA_FLOOR = 1e-6
CONVERGENCE_FLOOR = 1e-13


def stop_threshold(scenario: "CouplingScenario", tol: float,
                   r0_norm: float) -> float:
    """Residual norm below which an iteration counts as converged.

    Relative to the initial residual, but never below a floor scaled by
    the global interface load: when the fine models reproduce the global
    one exactly, r_0 is already at roundoff and must pass on its own.
    """
    floor = CONVERGENCE_FLOOR * float(np.linalg.norm(scenario.rhs_global))
    return max(tol * r0_norm, floor)


@dataclass(frozen=True)
class IterationRecord:
    """State snapshot after one global solve."""

    index: int
    p_gamma: np.ndarray
    residual: np.ndarray
    residual_norm: float
    omega: float
    wall_time: float


@dataclass
class SolveReport:
    """Outcome of one solver run.

    Asynchronous variants attach their per-step delay/solve-count trace;
    synchronous runs leave it None.
    """

    converged: bool
    history: list[IterationRecord]
    final_u_gamma: np.ndarray
    total_global_solves: int
    patch_solves: dict[int, int]
    variant: str
    trace: "object | None" = None

    @property
    def iterations(self) -> int:
        return len(self.history) - 1

    @property
    def final_relative_residual(self) -> float:
        r0 = self.history[0].residual_norm
        return self.history[-1].residual_norm / r0 if r0 > 0 else 0.0


def global_solve(scenario: CouplingScenario,
                 p_gamma: np.ndarray) -> np.ndarray:
    """Interface trace of the global model under the interface load p."""
    return scenario.solve_interface(p_gamma)


def compute_residual(scenario: CouplingScenario,
                     u_gamma: np.ndarray) -> np.ndarray:
    """Negated sum of all subdomain interface reactions at the trace u.

    Zero exactly when u is the interface trace of the coupled reference
    solution.
    """
    acc = np.zeros(scenario.gamma_dim)
    for sid in scenario.subdomain_ids:
        acc += interface_reaction(scenario, sid, u_gamma)
    return -acc


def aitken_update(omega: float, residual: np.ndarray,
                  residual_prev: np.ndarray) -> float:
    """Aitken delta-squared relaxation from two consecutive residuals.

    ``omega`` is the value used in the step that produced ``residual`` from
    ``residual_prev``; the return value is the relaxation for the next
    step, clamped to [1e-6, 10].  For a scalar error contraction
    r_j = (1 - c) r_{j-1} the update returns omega / c, which zeroes the
    next residual.
    """
    r, r_prev = np.asarray(residual), np.asarray(residual_prev)
    if not np.linalg.norm(r):
        return omega
    delta = r - r_prev
    denom = float(delta @ delta)
    if denom == 0.0:
        raise StagnationError("Aitken update: residual did not change "
                              "between iterations")
    new_omega = -omega * float(r_prev @ delta) / denom
    return float(min(max(new_omega, OMEGA_FLOOR), OMEGA_CAP))


def richardson_sync(scenario: CouplingScenario, omega: float = 1.0,
                    tol: float = 1e-8, max_iter: int = 10000,
                    relaxation: str = "fixed") -> SolveReport:
    """Stationary (or Aitken-accelerated) synchronous coupling iteration.

    ``relaxation`` is "fixed" (constant omega) or "aitken" (omega re-fitted
    each step, starting from 1.0 regardless of the omega argument).
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    if relaxation not in ("fixed", "aitken"):
        raise ValueError(f"unknown relaxation {relaxation!r}")

    aitken = relaxation == "aitken"
    w = 1.0 if aitken else float(omega)
    p = np.zeros(scenario.gamma_dim)
    history: list[IterationRecord] = []
    r_prev: np.ndarray | None = None
    r0 = 0.0
    threshold = 0.0
    t0 = perf_counter()
    converged = False
    u = np.zeros(scenario.gamma_dim)

    for j in range(max_iter + 1):
        u = scenario.solve_interface(p)
        r = compute_residual(scenario, u)
        rn = float(np.linalg.norm(r))
        if j == 0:
            r0 = rn
            threshold = stop_threshold(scenario, tol, r0)
        history.append(IterationRecord(index=j, p_gamma=p.copy(),
                                       residual=r, residual_norm=rn,
                                       omega=w,
                                       wall_time=perf_counter() - t0))
        if rn <= threshold:
            converged = True
            break
        if rn > DIVERGENCE_FACTOR * r0:
            raise DivergenceError(
                f"residual grew to {rn:.3e} (>= 1e6 * ||r_0||) at "
                f"iteration {j}", history)
        if aitken and r_prev is not None:
            w = aitken_update(w, r, r_prev)
        p = p + w * r
        r_prev = r

    solves = len(history)
    patch_solves = {sid: solves for sid in scenario.patch_ids}
    return SolveReport(converged=converged, history=history,
                       final_u_gamma=u, total_global_solves=solves,
                       patch_solves=patch_solves,
                       variant="sync-aitken" if aitken else "sync-fixed")


# ---------------------------------------------------------------------------
# monolithic reference


@dataclass(frozen=True)
class ReferenceSolution:
    """Direct solution of the coupled problem.

    ``fields`` maps subdomain id to the full nodal field of its fine model
    (the complement keeps its global-part mesh); ``u_gamma`` is the
    interface trace in the coupling ordering.
    """

    u_gamma: np.ndarray
    fields: dict[int, np.ndarray]


def monolithic_reference(scenario: CouplingScenario) -> ReferenceSolution:
    """Assemble and solve the coupled system in one sparse solve.

    Unknowns are the interface trace on Gamma plus every subdomain's
    non-interface dofs; fine interface dofs are constrained to the
    interpolated trace, which eliminates them through the transfer maps.
    Builds straight from the assembled subdomain stiffnesses, bypassing
    condensation entirely.
    """
    ng = scenario.gamma_dim
    blocks_interior: list = []
    coupling_rows: list = []
    rhs_gamma = np.zeros(ng)
    rhs_interior: list[np.ndarray] = []
    k_gamma = sp.csr_matrix((ng, ng))

    order = scenario.subdomain_ids
    interior_meta: list[tuple[int, np.ndarray, np.ndarray]] = []
    for sid in order:
        system = scenario.fine_systems[sid]
        cond = scenario.condensed_fine[sid]
        iface, interior = cond.interface_dofs, cond.interior_dofs
        k = system.stiffness
        # Map local interface dofs to the Gamma trace: C = J A^T as a
        # sparse rectangular operator (|iface_local| x |Gamma|).
        amap = scenario.assembly_ops[sid]
        a_op = sp.csr_matrix((np.ones(len(amap)),
                              (np.arange(len(amap)), amap)),
                             shape=(len(amap), ng))
        j = scenario.transfer_ops[sid]
        c = a_op if j is None else (j @ a_op).tocsr()

        k_gg = k[iface][:, iface]
        k_gi = k[iface][:, interior]
        k_ii = k[interior][:, interior]
        k_gamma = k_gamma + c.T @ k_gg @ c
        coupling_rows.append(c.T @ k_gi)
        blocks_interior.append(k_ii)
        rhs_gamma += c.T @ system.load[iface]
        rhs_interior.append(system.load[interior])
        interior_meta.append((sid, iface, interior))

    n_sub = len(order)
    grid: list[list] = [[None] * (n_sub + 1) for _ in range(n_sub + 1)]
    grid[0][0] = k_gamma
    for i in range(n_sub):
        grid[0][i + 1] = coupling_rows[i]
        grid[i + 1][0] = coupling_rows[i].T
        grid[i + 1][i + 1] = blocks_interior[i]
    big = sp.bmat(grid, format="csc")
    rhs = np.concatenate([rhs_gamma] + rhs_interior)
    x = spla.spsolve(big, rhs)

    u_gamma = x[:ng]
    fields: dict[int, np.ndarray] = {}
    offset = ng
    for (sid, iface, interior) in interior_meta:
        system = scenario.fine_systems[sid]
        amap = scenario.assembly_ops[sid]
        j = scenario.transfer_ops[sid]
        trace = u_gamma[amap] if j is None else j @ u_gamma[amap]
        u_local = np.empty(system.dof_count)
        u_local[iface] = trace
        u_local[interior] = x[offset:offset + len(interior)]
        offset += len(interior)
        fields[sid] = system.full_field(u_local)
    return ReferenceSolution(u_gamma=u_gamma, fields=fields)
