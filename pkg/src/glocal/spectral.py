"""Spectral machinery: companion matrices, relaxation bounds, certificates.

One step of the delayed iteration acting on the stacked history
(p_j, p_{j-1}, ..., p_{j-D}) is the affine map with block companion matrix

        [ I - w X_0   -w X_1  ...  -w X_D ]
    B = [     I          0    ...     0   ]
        [     0          I    ...     0   ]
        [    ...                      ... ]

where X_k collects the interface-embedded fine Schur complements of the
subdomains whose data is k steps old, multiplied by the inverse of the
assembled global interface operator.  Its eigenvalues are the roots of

    det( (1-l) l^D I - w sum_k l^(D-k) X_k ) = 0,

and the iteration (for that particular age partition) contracts iff the
spectral radius is below one.  A run with changing partitions converges
when every reachable partition yields a contraction, which is what
``certify_paracontraction`` samples.

The relaxation bounds come from the generalized eigenvalues alpha of the
pencil (sum of embedded fine Schur, global Schur), computed through the
Cholesky congruence that keeps the problem symmetric.  ``2 / alpha_max``
is sharp for the synchronous iteration; the delayed factor
``(1-eps)^D alpha_min / ((1+eps)^(2D) alpha_max^2)`` with
``eps = min(sin(pi/(3D)), 1/2)`` is sufficient, not sharp, so the
certificate usually admits noticeably larger omega.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import pi, sin

import numpy as np
import scipy.linalg as la

from .coupling import CouplingScenario

__all__ = ["CompanionSystem", "SpectralBounds", "CertificateReport",
           "build_companion", "spectral_radius", "characteristic_value",
           "generalized_spectrum", "generalized_alphas", "relaxation_bounds",
           "certify_paracontraction"]


@dataclass(frozen=True)
class CompanionSystem:
    """Block companion matrix of one age partition at relaxation omega."""

    omega: float
    max_delay: int
    gamma_dim: int
    blocks: tuple[np.ndarray, ...]   # X_0 .. X_D
    matrix: np.ndarray               # (D+1)*gamma_dim square


@dataclass(frozen=True)
class SpectralBounds:
    """Relaxation bounds derived from the generalized spectrum.

    ``omega_async_factor`` (and ``epsilon``) are None for max_delay = 0,
    where the synchronous bound is the whole story.
    """

    alpha_min: float
    alpha_max: float
    max_delay: int
    epsilon: float | None
    omega_sync: float
    omega_async_factor: float | None


@dataclass(frozen=True)
class CertificateReport:
    """Spectral radii of sampled age partitions at one (omega, D) point."""

    omega: float
    max_delay: int
    trials: int
    seed: int
    rhos: tuple[float, ...]
    rho_max: float
    passed: bool
    partitions: tuple[tuple[tuple[int, ...], ...], ...]


def _validate_partition(scenario: CouplingScenario, partition,
                        max_delay: int) -> list[list[int]]:
    slots = [list(slot) for slot in partition]
    if len(slots) != max_delay + 1:
        raise ValueError(f"partition needs {max_delay + 1} slots, "
                         f"got {len(slots)}")
    flat = [sid for slot in slots for sid in slot]
    if sorted(flat) != sorted(scenario.subdomain_ids):
        raise ValueError("partition must cover every subdomain exactly once")
    return slots


def build_companion(scenario: CouplingScenario, partition, omega: float,
                    max_delay: int, *, symmetrized: bool = False,
                    p_hat: np.ndarray | None = None) -> CompanionSystem:
    """Companion matrix of the delayed iteration for one age partition.

    ``partition`` lists, for each age k = 0..max_delay, the subdomain ids
    whose reaction is k steps old; it must cover all subdomains exactly
    once (empty slots are fine).  With ``symmetrized`` the blocks are
    congruence-transformed by the global Cholesky factor, which leaves the
    spectrum unchanged but makes each block symmetric.  Passing the exact
    interface load ``p_hat`` verifies the fixed-point property of the
    affine step as a construction self-check.
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    if max_delay < 0:
        raise ValueError("max_delay must be non-negative")
    slots = _validate_partition(scenario, partition, max_delay)
    n = scenario.gamma_dim

    chol_l = np.linalg.cholesky(scenario.schur_global)
    blocks: list[np.ndarray] = []
    for slot in slots:
        shat = np.zeros((n, n))
        for sid in slot:
            shat += scenario.fine_schur_embedded[sid]
        if symmetrized:
            y = la.solve_triangular(chol_l, shat, lower=True,
                                    check_finite=False)
            x = la.solve_triangular(chol_l, y.T, lower=True,
                                    check_finite=False).T
        else:
            x = la.cho_solve(scenario._sg_chol, shat, check_finite=False).T
        blocks.append(x)

    size = (max_delay + 1) * n
    matrix = np.zeros((size, size))
    matrix[:n, :n] = np.eye(n) - omega * blocks[0]
    for k in range(1, max_delay + 1):
        matrix[:n, k * n:(k + 1) * n] = -omega * blocks[k]
    for k in range(max_delay):
        matrix[(k + 1) * n:(k + 2) * n, k * n:(k + 1) * n] = np.eye(n)

    system = CompanionSystem(omega=omega, max_delay=max_delay, gamma_dim=n,
                             blocks=tuple(blocks), matrix=matrix)
    if p_hat is not None:
        _verify_fixed_point(scenario, system, np.asarray(p_hat, dtype=float),
                            symmetrized)
    return system


def _verify_fixed_point(scenario: CouplingScenario, system: CompanionSystem,
                        p_hat: np.ndarray, symmetrized: bool):
    n = system.gamma_dim
    if symmetrized:
        chol_l = np.linalg.cholesky(scenario.schur_global)
        p_hat = la.solve_triangular(chol_l, p_hat, lower=True,
                                    check_finite=False)
        offset = la.solve_triangular(chol_l, scenario.offset, lower=True,
                                     check_finite=False)
    else:
        offset = scenario.offset
    stacked = np.tile(p_hat, system.max_delay + 1)
    advanced = system.matrix @ stacked
    advanced[:n] -= system.omega * offset
    scale = max(float(np.linalg.norm(stacked)), 1.0)
    if np.linalg.norm(advanced - stacked) > 1e-8 * scale:
        raise ValueError("companion construction failed its fixed-point "
                         "self-check")


def spectral_radius(system: CompanionSystem | np.ndarray) -> float:
    """Largest eigenvalue magnitude of a companion system (or raw matrix)."""
    matrix = getattr(system, "matrix", system)
    return float(np.abs(np.linalg.eigvals(matrix)).max())


def characteristic_value(system: CompanionSystem, lam: complex) -> complex:
    """Evaluate det((1-l) l^D I - w sum_k l^(D-k) X_k) at l = lam.

    Zero (up to roundoff) exactly at the companion eigenvalues; meant for
    small cross-checks of the block-companion construction.
    """
    n = system.gamma_dim
    d = system.max_delay
    acc = np.zeros((n, n), dtype=complex)
    for k, x in enumerate(system.blocks):
        acc += lam ** (d - k) * x
    poly = (1 - lam) * lam ** d * np.eye(n) - system.omega * acc
    return complex(np.linalg.det(poly))


def generalized_spectrum(scenario: CouplingScenario) -> np.ndarray:
    """All generalized eigenvalues of (sum embedded fine Schur, global Schur).

    Computed as the symmetric eigenvalues of L^{-1} (sum) L^{-T} where the
    global interface operator is L L^T.
    """
    shat = np.zeros((scenario.gamma_dim, scenario.gamma_dim))
    for sid in scenario.subdomain_ids:
        shat += scenario.fine_schur_embedded[sid]
    chol_l = np.linalg.cholesky(scenario.schur_global)
    y = la.solve_triangular(chol_l, shat, lower=True, check_finite=False)
    m = la.solve_triangular(chol_l, y.T, lower=True, check_finite=False).T
    return np.linalg.eigvalsh(0.5 * (m + m.T))


def generalized_alphas(scenario: CouplingScenario) -> tuple[float, float]:
    """Extreme generalized eigenvalues (alpha_min, alpha_max)."""
    spectrum = generalized_spectrum(scenario)
    return float(spectrum[0]), float(spectrum[-1])


def relaxation_bounds(alpha_min: float, alpha_max: float,
                      max_delay: int) -> SpectralBounds:
    """Admissible-relaxation summary for a given delay bound.

    The synchronous bound 2/alpha_max is sharp.  For max_delay >= 1 the
    reported async factor is a sufficient bound only; certification gives
    the sharper, per-partition answer.
    """
    if not 0 < alpha_min <= alpha_max:
        raise ValueError("need 0 < alpha_min <= alpha_max")
    if max_delay < 0:
        raise ValueError("max_delay must be non-negative")
    omega_sync = 2.0 / alpha_max
    if max_delay == 0:
        return SpectralBounds(alpha_min=alpha_min, alpha_max=alpha_max,
                              max_delay=0, epsilon=None,
                              omega_sync=omega_sync,
                              omega_async_factor=None)
    eps = min(sin(pi / (3.0 * max_delay)), 0.5)
    factor = ((1.0 - eps) ** max_delay * alpha_min
              / ((1.0 + eps) ** (2 * max_delay) * alpha_max ** 2))
    return SpectralBounds(alpha_min=alpha_min, alpha_max=alpha_max,
                          max_delay=max_delay, epsilon=eps,
                          omega_sync=omega_sync, omega_async_factor=factor)


def certify_paracontraction(scenario: CouplingScenario, omega: float,
                            max_delay: int, trials: int = 100,
                            seed: int = 0) -> CertificateReport:
    """Sample random age partitions and check every one contracts.

    Patches are assigned ages uniformly in [0, max_delay]; the complement,
    when present, always sits at age 0.  For max_delay = 0 there is only
    one partition, evaluated once.  The certificate passes when every
    sampled spectral radius is strictly below one; a failure is reported,
    not raised.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if max_delay < 0:
        raise ValueError("max_delay must be non-negative")
    rng = np.random.default_rng(seed)
    patches = scenario.patch_ids

    assignments: list[np.ndarray]
    if max_delay == 0:
        assignments = [np.zeros(len(patches), dtype=np.int64)]
    else:
        assignments = [rng.integers(0, max_delay + 1, size=len(patches))
                       for _ in range(trials)]

    rhos: list[float] = []
    partitions: list[tuple[tuple[int, ...], ...]] = []
    for assign in assignments:
        slots: list[list[int]] = [[] for _ in range(max_delay + 1)]
        if scenario.complement is not None:
            slots[0].append(0)
        for sid, age in zip(patches, assign):
            slots[int(age)].append(sid)
        system = build_companion(scenario, slots, omega, max_delay)
        rhos.append(spectral_radius(system))
        partitions.append(tuple(tuple(slot) for slot in slots))

    rho_max = max(rhos)
    return CertificateReport(omega=omega, max_delay=max_delay,
                             trials=len(assignments), seed=seed,
                             rhos=tuple(rhos), rho_max=rho_max,
                             passed=rho_max < 1.0,
                             partitions=tuple(partitions))
