"""Static condensation of assembled systems onto interface dofs.

For a reduced system ``K u = f`` and a split of its dofs into interface
and interior blocks, the condensed operator is the Schur complement

    S = K_gg - K_gi K_ii^{-1} K_ig,      b = f_g - K_gi K_ii^{-1} f_i,

so that the interface reaction (discrete Dirichlet-to-Neumann map) of the
subdomain under an interface trace ``u_g`` is ``S u_g - b``.  The interior
block is factorized once with a dense Cholesky; interior recovery reuses
that factorization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import SingularInteriorError
from .model_problems import AssembledSystem

__all__ = ["CondensedOperator", "condense", "dirichlet_to_neumann",
           "expand_interior"]


@dataclass(frozen=True)
class CondensedOperator:
    """Schur complement of one subdomain on its interface dofs.

    ``interface_dofs`` and ``interior_dofs`` index into the reduced dof
    numbering of the originating :class:`AssembledSystem`; together they
    cover it exactly.  ``schur`` is dense and inherits symmetry and, for
    meshes with enough Dirichlet data or a nonempty interface complement,
    positive definiteness from the stiffness.
    """

    schur: np.ndarray
    rhs: np.ndarray
    interface_dofs: np.ndarray
    interior_dofs: np.ndarray
    dof_count: int
    _interior_chol: tuple | None
    _k_interface_interior: np.ndarray
    _f_interior: np.ndarray

    @property
    def interface_count(self) -> int:
        return len(self.interface_dofs)


def condense(system: AssembledSystem, interface_dofs,
             label: str = "interior block") -> CondensedOperator:
    """Condense a reduced system onto the given interface dofs.

    ``interface_dofs`` must be unique, in range, and may not cover all dofs
    unless the interior is genuinely empty (then S is just K_gg).  ``label``
    names the subdomain in the singular-interior error.
    """
    iface = np.asarray(interface_dofs, dtype=np.int64)
    n = system.dof_count
    if iface.ndim != 1:
        raise ValueError("interface dofs must be a flat index list")
    if len(np.unique(iface)) != len(iface):
        raise ValueError("interface dofs contain duplicates")
    if iface.size and (iface.min() < 0 or iface.max() >= n):
        raise ValueError("interface dof out of range")

    mask = np.ones(n, dtype=bool)
    mask[iface] = False
    interior = np.nonzero(mask)[0]

    k = system.stiffness
    f = system.load
    k_gg = k[iface][:, iface].toarray()
    if interior.size == 0:
        return CondensedOperator(schur=k_gg, rhs=f[iface].copy(),
                                 interface_dofs=iface, interior_dofs=interior,
                                 dof_count=n, _interior_chol=None,
                                 _k_interface_interior=np.zeros((len(iface), 0)),
                                 _f_interior=np.zeros(0))

    k_gi = k[iface][:, interior].toarray()
    k_ii = k[interior][:, interior].toarray()
    try:
        chol = la.cho_factor(k_ii, lower=True, check_finite=False)
    except la.LinAlgError as err:
        raise SingularInteriorError(label) from err
    # K_ii^{-1} K_ig as one multi-rhs triangular sweep.
    w = la.cho_solve(chol, k_gi.T, check_finite=False)
    schur = k_gg - k_gi @ w
    rhs = f[iface] - k_gi @ la.cho_solve(chol, f[interior],
                                         check_finite=False)
    return CondensedOperator(schur=schur, rhs=rhs, interface_dofs=iface,
                             interior_dofs=interior, dof_count=n,
                             _interior_chol=chol,
                             _k_interface_interior=k_gi,
                             _f_interior=f[interior].copy())


def dirichlet_to_neumann(op: CondensedOperator,
                         u_interface: np.ndarray) -> np.ndarray:
    """Interface reaction of the subdomain under the trace ``u_interface``."""
    u = np.asarray(u_interface, dtype=float)
    if u.shape != (op.interface_count,):
        raise ValueError("trace length does not match the interface")
    return op.schur @ u - op.rhs


def expand_interior(op: CondensedOperator,
                    u_interface: np.ndarray) -> np.ndarray:
    """Recover the full reduced-dof vector from an interface trace.

    Interior values solve ``K_ii u_i = f_i - K_ig u_g`` with the stored
    factorization; the result is laid out in the original reduced numbering.
    """
    u = np.asarray(u_interface, dtype=float)
    if u.shape != (op.interface_count,):
        raise ValueError("trace length does not match the interface")
    full = np.empty(op.dof_count)
    full[op.interface_dofs] = u
    if op.interior_dofs.size:
        rhs = op._f_interior - op._k_interface_interior.T @ u
        full[op.interior_dofs] = la.cho_solve(op._interior_chol, rhs,
                                              check_finite=False)
    return full
