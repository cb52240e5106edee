"""Coupling topology: how fine patches plug into the global model.

A scenario starts from one global mesh whose elements are labelled by
subdomain: label 0 is the complement (optional), labels 1..N are patch
zones.  Each patch zone has a fine mesh covering the same region.  The
coupling interface Gamma is the set of free global nodes shared by at
least two subdomains.  Three operator families tie everything together:

* assembly maps ``A_s`` (index maps) scatter each subdomain's interface
  dofs into Gamma,
* transfer maps ``J_s`` interpolate a global interface trace onto the
  fine patch interface (piecewise-linear, a permutation when meshes match),
* Schur complements of every subdomain, global side and fine side, from
  :mod:`.condensation`.

The assembled global interface operator is ``S_G = sum A_s S_sG A_s^T``
(with its load ``b_G``), and each patch contributes an interface-embedded
fine operator ``A_s J_s^T S_sF J_s A_s^T``.  The residual of the coupled
problem at an interface trace u is

    r(u) = -( sum_s A_s J_s^T (S_sF J_s A_s^T u - b_sF) ),

zero exactly at the reference (monolithic) solution.  ``residual_offset``
is the affine part of -r expressed in the interface load variable, i.e.
r(p) = -(Q p + offset) with Q = (sum embedded fine Schur) S_G^{-1}.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .condensation import CondensedOperator, condense, dirichlet_to_neumann
from .errors import ConfigError, GeometryError, TopologyError
from .model_problems import (AssembledSystem, MeshModel, assemble,
                             extract_submesh)

__all__ = [
    "PatchPair",
    "ComplementDomain",
    "CouplingScenario",
    "build_transfer",
    "build_assembly_operators",
    "assemble_global_schur",
    "embedded_fine_schur",
    "residual_offset",
    "interface_reaction",
    "build_scenario",
]


@dataclass(frozen=True)
class PatchPair:
    """One zone of interest: its global-part mesh and its fine mesh.

    ``interface_nodes_global`` are parent (global-mesh) node ids, free ones
    only; ``interface_nodes_fine`` index into the fine mesh.  Both sorted.
    """

    sid: int
    global_part: MeshModel
    fine_part: MeshModel
    global_nodes: np.ndarray            # global-part local -> parent ids
    interface_nodes_global: np.ndarray
    interface_nodes_fine: np.ndarray


@dataclass(frozen=True)
class ComplementDomain:
    """The part of the global model not covered by any patch."""

    model: MeshModel
    global_nodes: np.ndarray
    interface_nodes: np.ndarray


@dataclass
class CouplingScenario:
    """Everything the solvers need, built once by :func:`build_scenario`.

    Subdomain id 0 is the complement when present; patches are 1..N.
    ``subdomain_ids`` fixes the traversal order used everywhere, which
    keeps residual assembly deterministic.
    """

    name: str
    global_model: MeshModel
    patches: dict[int, PatchPair]
    complement: ComplementDomain | None
    gamma_nodes: np.ndarray             # free interface nodes, sorted
    gamma_coords: np.ndarray
    ndof_per_node: int
    subdomain_ids: tuple[int, ...]
    assembly_ops: dict[int, np.ndarray]            # A_s as dof index maps
    transfer_ops: dict[int, sp.csr_matrix | None]  # J_s, None == identity
    condensed_global: dict[int, CondensedOperator]
    condensed_fine: dict[int, CondensedOperator]
    fine_systems: dict[int, AssembledSystem]
    global_part_systems: dict[int, AssembledSystem]
    schur_global: np.ndarray
    rhs_global: np.ndarray
    fine_schur_embedded: dict[int, np.ndarray]
    offset: np.ndarray
    _sg_chol: tuple = field(repr=False, default=None)

    @property
    def gamma_dim(self) -> int:
        return len(self.gamma_nodes) * self.ndof_per_node

    @property
    def patch_ids(self) -> tuple[int, ...]:
        return tuple(s for s in self.subdomain_ids if s != 0)

    def solve_interface(self, p_gamma: np.ndarray) -> np.ndarray:
        """Global interface solve ``u = S_G^{-1} (b_G + p)``."""
        p = np.asarray(p_gamma, dtype=float)
        if p.shape != (self.gamma_dim,):
            raise ValueError("interface load has the wrong length")
        return la.cho_solve(self._sg_chol, self.rhs_global + p,
                            check_finite=False)


# ---------------------------------------------------------------------------
# transfer operators


def _segment_candidates(coords: np.ndarray):
    ng = len(coords)
    i, j = np.triu_indices(ng, k=1)
    p0 = coords[i]
    v = coords[j] - coords[i]
    length2 = np.einsum("ij,ij->i", v, v)
    return i, j, p0, v, length2


def build_transfer(global_coords: np.ndarray, fine_coords: np.ndarray,
                   tol: float | None = None) -> sp.csr_matrix:
    """Node-level interpolation from global interface nodes to fine ones.

    Each fine node must coincide with a global node, sit on a segment
    between two of them, or (3D) sit inside an axis-aligned rectangle of
    four of them; the weights are the matching hat/bilinear values, so rows
    sum to one and linear fields are reproduced.  A fine node off the
    global interface raises :class:`GeometryError` (this also catches
    Dirichlet data that disagrees between the two sides).
    """
    gc = np.atleast_2d(np.asarray(global_coords, dtype=float))
    fc = np.atleast_2d(np.asarray(fine_coords, dtype=float))
    if gc.shape[0] == 0 or fc.shape[0] == 0:
        raise GeometryError("empty interface")
    if gc.shape[1] != fc.shape[1]:
        raise GeometryError("coordinate dimensions differ between sides")
    if tol is None:
        span = max(np.ptp(gc, axis=0).max(), 1.0)
        tol = 1e-9 * span

    seg = _segment_candidates(gc) if len(gc) >= 2 else None
    rows, cols, vals = [], [], []
    for fi, x in enumerate(fc):
        dist = np.linalg.norm(gc - x, axis=1)
        nearest = int(np.argmin(dist))
        if dist[nearest] <= tol:
            rows.append(fi)
            cols.append(nearest)
            vals.append(1.0)
            continue
        # Face-interior points (3D) take the four-corner weights first;
        # a diagonal segment would also contain them but does not match
        # the coarse element trace there.
        placed = False
        if gc.shape[1] == 3:
            placed = _bilinear_row(gc, x, tol, fi, rows, cols, vals)
        if not placed and seg is not None:
            i, j, p0, v, length2 = seg
            t = np.einsum("ij,ij->i", x - p0, v) / length2
            off = np.linalg.norm(x - p0 - t[:, None] * v, axis=1)
            ok = (off <= tol) & (t > 0.0) & (t < 1.0)
            if np.any(ok):
                pick = np.nonzero(ok)[0]
                best = pick[np.argmin(length2[pick])]
                rows.extend([fi, fi])
                cols.extend([int(i[best]), int(j[best])])
                vals.extend([1.0 - t[best], t[best]])
                placed = True
        if not placed:
            raise GeometryError(
                f"fine interface node at {x} is not on the global interface "
                "(geometry mismatch or inconsistent Dirichlet data)")
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(fc), len(gc)))


def _bilinear_row(gc, x, tol, fi, rows, cols, vals) -> bool:
    for axis in range(3):
        plane = np.abs(gc[:, axis] - x[axis]) <= tol
        if plane.sum() < 4:
            continue
        u_ax, v_ax = [a for a in range(3) if a != axis]
        pu, pv = gc[plane, u_ax], gc[plane, v_ax]
        below_u, above_u = pu[pu < x[u_ax] - tol], pu[pu > x[u_ax] + tol]
        below_v, above_v = pv[pv < x[v_ax] - tol], pv[pv > x[v_ax] + tol]
        if not (below_u.size and above_u.size and below_v.size
                and above_v.size):
            continue
        u_lo, u_hi = below_u.max(), above_u.min()
        v_lo, v_hi = below_v.max(), above_v.min()
        plane_idx = np.nonzero(plane)[0]

        def corner(u, v):
            hit = (np.abs(pu - u) <= tol) & (np.abs(pv - v) <= tol)
            found = np.nonzero(hit)[0]
            return int(plane_idx[found[0]]) if found.size else None

        ids = [corner(u_lo, v_lo), corner(u_hi, v_lo),
               corner(u_lo, v_hi), corner(u_hi, v_hi)]
        if any(c is None for c in ids):
            continue
        du, dv = u_hi - u_lo, v_hi - v_lo
        su, sv = (x[u_ax] - u_lo) / du, (x[v_ax] - v_lo) / dv
        weights = [(1 - su) * (1 - sv), su * (1 - sv),
                   (1 - su) * sv, su * sv]
        rows.extend([fi] * 4)
        cols.extend(ids)
        vals.extend(weights)
        return True
    return False


def _expand_transfer(j_node: sp.csr_matrix, ndpn: int) -> sp.csr_matrix:
    if ndpn == 1:
        return j_node.tocsr()
    return sp.kron(j_node, sp.identity(ndpn, format="csr"), format="csr")


# ---------------------------------------------------------------------------
# assembly operators


def build_assembly_operators(gamma_nodes: np.ndarray,
                             interface_nodes_by_sid: dict[int, np.ndarray],
                             ndof_per_node: int) -> dict[int, np.ndarray]:
    """Dof-level index maps Gamma_s -> Gamma, one per subdomain.

    ``A_s`` is represented as an index array: scattering is
    ``out[map] += local`` and restriction is ``local = u[map]``.
    """
    gamma_nodes = np.asarray(gamma_nodes, dtype=np.int64)
    ops: dict[int, np.ndarray] = {}
    for sid, nodes in interface_nodes_by_sid.items():
        nodes = np.asarray(nodes, dtype=np.int64)
        pos = np.searchsorted(gamma_nodes, nodes)
        bad = (pos >= len(gamma_nodes)) | \
            (gamma_nodes[np.minimum(pos, len(gamma_nodes) - 1)] != nodes)
        if np.any(bad):
            raise TopologyError(
                f"subdomain {sid}: interface node "
                f"{nodes[np.argmax(bad)]} is not on the coupling interface")
        dofs = (pos[:, None] * ndof_per_node
                + np.arange(ndof_per_node)).reshape(-1)
        ops[sid] = dofs
    return ops


def assemble_global_schur(gamma_dim: int,
                          condensed: dict[int, CondensedOperator],
                          assembly_ops: dict[int, np.ndarray],
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Sum the per-subdomain global-side Schur complements on Gamma."""
    schur = np.zeros((gamma_dim, gamma_dim))
    rhs = np.zeros(gamma_dim)
    for sid, op in condensed.items():
        amap = assembly_ops[sid]
        if len(amap) != op.interface_count:
            raise TopologyError(
                f"subdomain {sid}: assembly map and condensed interface "
                "disagree in size")
        schur[np.ix_(amap, amap)] += op.schur
        rhs[amap] += op.rhs
    return schur, rhs


def embedded_fine_schur(gamma_dim: int, op: CondensedOperator,
                        assembly_map: np.ndarray,
                        transfer: sp.csr_matrix | None) -> np.ndarray:
    """Interface embedding ``A J^T S_F J A^T`` of one fine Schur complement."""
    if transfer is None:
        local = op.schur
    else:
        jd = transfer.toarray()
        if jd.shape[0] != op.interface_count:
            raise TopologyError("transfer rows do not match the fine interface")
        local = jd.T @ op.schur @ jd
    if local.shape[0] != len(assembly_map):
        raise TopologyError("assembly map does not match the transfer")
    out = np.zeros((gamma_dim, gamma_dim))
    out[np.ix_(assembly_map, assembly_map)] = local
    return out


def interface_reaction(scenario: CouplingScenario, sid: int,
                       u_gamma: np.ndarray) -> np.ndarray:
    """One subdomain's contribution ``A_s J_s^T lambda_s`` scattered on Gamma.

    ``lambda_s`` is the fine-side interface reaction under the interpolated
    trace; summing over subdomains and negating gives the coupling residual.
    """
    amap = scenario.assembly_ops[sid]
    trace = u_gamma[amap]
    j = scenario.transfer_ops[sid]
    if j is None:
        lam = dirichlet_to_neumann(scenario.condensed_fine[sid], trace)
        local = lam
    else:
        lam = dirichlet_to_neumann(scenario.condensed_fine[sid], j @ trace)
        local = j.T @ lam
    out = np.zeros(scenario.gamma_dim)
    out[amap] = local
    return out


def residual_offset(scenario: CouplingScenario) -> np.ndarray:
    """Affine part of the (negated) coupling residual in the load variable.

    Equals ``-r(p=0)``; the coupled reference load solves
    ``Q p + offset = 0`` with ``Q = (sum embedded fine Schur) S_G^{-1}``.
    """
    u0 = scenario.solve_interface(np.zeros(scenario.gamma_dim))
    acc = np.zeros(scenario.gamma_dim)
    for sid in scenario.subdomain_ids:
        acc += interface_reaction(scenario, sid, u0)
    return acc


# ---------------------------------------------------------------------------
# geometric interface detection


_HEX_FACES = [(0, 1, 2, 3), (4, 5, 6, 7), (0, 1, 5, 4),
              (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7)]


def _element_facets(dim: int, conn: np.ndarray):
    if dim == 1:
        return [(conn[0],), (conn[1],)]
    if dim == 2:
        return [(conn[0], conn[1]), (conn[1], conn[2]), (conn[2], conn[0])]
    return [tuple(conn[i] for i in face) for face in _HEX_FACES]


def _points_on_facet(points: np.ndarray, facet: np.ndarray,
                     tol: float) -> np.ndarray:
    """Boolean mask of points lying on the facet (vertex/segment/quad)."""
    if len(facet) == 1:
        return np.linalg.norm(points - facet[0], axis=1) <= tol
    if len(facet) == 2:
        v = facet[1] - facet[0]
        length2 = float(v @ v)
        t = (points - facet[0]) @ v / length2
        off = np.linalg.norm(points - facet[0] - t[:, None] * v, axis=1)
        return (off <= tol) & (t >= -1e-9) & (t <= 1 + 1e-9)
    tri1 = _points_in_triangle(points, facet[0], facet[1], facet[2], tol)
    tri2 = _points_in_triangle(points, facet[0], facet[2], facet[3], tol)
    return tri1 | tri2


def _points_in_triangle(points, p0, p1, p2, tol) -> np.ndarray:
    v1, v2 = p1 - p0, p2 - p0
    normal = np.cross(v1, v2)
    nn = np.linalg.norm(normal)
    w = points - p0
    plane = np.abs(w @ normal) / nn <= tol
    d00, d01, d11 = v1 @ v1, v1 @ v2, v2 @ v2
    denom = d00 * d11 - d01 * d01
    d20, d21 = w @ v1, w @ v2
    s = (d11 * d20 - d01 * d21) / denom
    t = (d00 * d21 - d01 * d20) / denom
    eps = 1e-9
    return plane & (s >= -eps) & (t >= -eps) & (s + t <= 1 + eps)


# ---------------------------------------------------------------------------
# scenario construction


def build_scenario(global_model: MeshModel, labels,
                   fine_meshes: dict[int, MeshModel], *,
                   source: float = 1.0, body_force=None,
                   name: str = "scenario") -> CouplingScenario:
    """Assemble, condense and wire up a full coupling scenario.

    ``labels`` assigns every global element to a subdomain: 0 is the
    complement (may be absent), positive labels are patch zones and must
    each come with a fine mesh.  The same source/body force is applied on
    every subdomain, global side and fine side.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (global_model.element_count,):
        raise TopologyError("labels must assign one subdomain per element")
    if labels.min() < 0:
        raise TopologyError("subdomain labels must be non-negative")
    patch_ids = sorted(int(s) for s in np.unique(labels) if s > 0)
    if not patch_ids:
        raise TopologyError("no patch zones: nothing to couple")
    if set(fine_meshes) != set(patch_ids):
        raise TopologyError(
            f"fine meshes {sorted(fine_meshes)} do not match patch zone "
            f"labels {patch_ids}")
    if not global_model.dirichlet:
        raise ConfigError("the global model carries no Dirichlet data; the "
                          "assembled interface operator would be singular")

    dim = global_model.dimension
    ndpn = 1 if global_model.material.kind == "thermal" else dim
    span = max(np.ptp(global_model.nodes, axis=0).max(), 1.0)
    tol = 1e-9 * span

    # Which subdomains touch each node; >= 2 makes it an interface node.
    node_labels: dict[int, set] = defaultdict(set)
    for conn, lab in zip(global_model.elements, labels):
        for n in conn:
            node_labels[int(n)].add(int(lab))
    interface_all = sorted(n for n, ls in node_labels.items() if len(ls) >= 2)
    gamma_nodes = np.array([n for n in interface_all
                            if n not in global_model.dirichlet],
                           dtype=np.int64)
    if gamma_nodes.size == 0:
        raise TopologyError("the coupling interface has no free nodes")
    constrained_iface = np.array([n for n in interface_all
                                  if n in global_model.dirichlet],
                                 dtype=np.int64)
    nonzero = [int(n) for n in constrained_iface
               if global_model.dirichlet[int(n)] != 0.0]
    if nonzero:
        raise GeometryError("interface nodes with nonzero prescribed values "
                            f"are not supported (nodes {nonzero})")

    # Interface facets per subdomain, for locating fine interface nodes.
    facet_labels: dict[tuple, set] = {}
    facet_order: dict[tuple, tuple] = {}
    for conn, lab in zip(global_model.elements, labels):
        for facet in _element_facets(dim, conn):
            key = tuple(sorted(int(n) for n in facet))
            facet_labels.setdefault(key, set()).add(int(lab))
            facet_order.setdefault(key, facet)
    facets_by_sid: dict[int, list] = defaultdict(list)
    for key, ls in facet_labels.items():
        if len(ls) >= 2:
            for s in ls:
                facets_by_sid[s].append(facet_order[key])

    has_complement = bool(np.any(labels == 0))
    subdomain_ids = tuple(([0] if has_complement else []) + patch_ids)

    patches: dict[int, PatchPair] = {}
    complement: ComplementDomain | None = None
    condensed_global: dict[int, CondensedOperator] = {}
    condensed_fine: dict[int, CondensedOperator] = {}
    fine_systems: dict[int, AssembledSystem] = {}
    global_part_systems: dict[int, AssembledSystem] = {}
    transfer_ops: dict[int, sp.csr_matrix | None] = {}
    iface_nodes_by_sid: dict[int, np.ndarray] = {}

    for sid in subdomain_ids:
        elem_ids = np.nonzero(labels == sid)[0]
        part, node_map = extract_submesh(global_model, elem_ids)
        system_g = assemble(part, source=source, body_force=body_force)
        gnodes = np.array([n for n in gamma_nodes
                           if sid in node_labels[int(n)]], dtype=np.int64)
        if gnodes.size == 0:
            raise TopologyError(f"subdomain {sid} has no free interface "
                                "nodes (floating patch?)")
        local_of = -np.ones(global_model.node_count, dtype=np.int64)
        local_of[node_map] = np.arange(len(node_map))
        local_ids = local_of[gnodes]
        cond_g = condense(system_g, system_g.node_dofs(local_ids),
                          label=f"subdomain {sid} (global part)")
        condensed_global[sid] = cond_g
        global_part_systems[sid] = system_g
        iface_nodes_by_sid[sid] = gnodes

        if sid == 0:
            complement = ComplementDomain(model=part, global_nodes=node_map,
                                          interface_nodes=gnodes)
            condensed_fine[0] = cond_g
            fine_systems[0] = system_g
            transfer_ops[0] = None
            continue

        fine = fine_meshes[sid]
        if fine.dimension != dim or fine.material.kind != \
                global_model.material.kind:
            raise TopologyError(f"patch {sid}: fine mesh dimension or "
                                "material kind differs from the global model")
        on_iface = np.zeros(fine.node_count, dtype=bool)
        for facet in facets_by_sid[sid]:
            coords = global_model.nodes[list(facet)]
            on_iface |= _points_on_facet(fine.nodes, coords, tol)
        fine_iface = np.array([n for n in np.nonzero(on_iface)[0]
                               if int(n) not in fine.dirichlet],
                              dtype=np.int64)
        if fine_iface.size == 0:
            raise GeometryError(f"patch {sid}: no fine interface nodes found")

        global_coords = global_model.nodes[gnodes]
        fine_coords = fine.nodes[fine_iface]
        # Nested-refinement check: every free global interface node must
        # have a coincident fine twin, otherwise the two interface
        # discretizations cannot represent the same trace space.
        for gidx, gx in zip(gnodes, global_coords):
            if np.linalg.norm(fine_coords - gx, axis=1).min() > tol:
                raise GeometryError(
                    f"patch {sid}: global interface node {int(gidx)} has no "
                    "matching fine node (interfaces differ geometrically)")
        # Constrained global interface nodes join the interpolation
        # candidates so boundary-adjacent fine nodes can be placed; their
        # columns multiply the (zero) prescribed values and are dropped.
        cnodes = np.array([n for n in constrained_iface
                           if sid in node_labels[int(n)]], dtype=np.int64)
        candidates = np.vstack([global_coords, global_model.nodes[cnodes]]) \
            if cnodes.size else global_coords
        j_node = build_transfer(candidates, fine_coords,
                                tol)[:, :len(gnodes)].tocsr()
        j_dof = _expand_transfer(j_node, ndpn)

        system_f = assemble(fine, source=source, body_force=body_force)
        cond_f = condense(system_f, system_f.node_dofs(fine_iface),
                          label=f"patch {sid} (fine)")
        condensed_fine[sid] = cond_f
        fine_systems[sid] = system_f
        transfer_ops[sid] = j_dof
        patches[sid] = PatchPair(sid=sid, global_part=part, fine_part=fine,
                                 global_nodes=node_map,
                                 interface_nodes_global=gnodes,
                                 interface_nodes_fine=fine_iface)

    gamma_dim = len(gamma_nodes) * ndpn
    assembly_ops = build_assembly_operators(gamma_nodes, iface_nodes_by_sid,
                                            ndpn)
    schur_global, rhs_global = assemble_global_schur(gamma_dim,
                                                     condensed_global,
                                                     assembly_ops)
    try:
        sg_chol = la.cho_factor(schur_global, lower=True, check_finite=False)
    except la.LinAlgError as err:
        raise ConfigError("assembled global interface operator is not "
                          "positive definite; check Dirichlet data") from err

    embedded = {sid: embedded_fine_schur(gamma_dim, condensed_fine[sid],
                                         assembly_ops[sid], transfer_ops[sid])
                for sid in subdomain_ids}

    scenario = CouplingScenario(
        name=name, global_model=global_model, patches=patches,
        complement=complement, gamma_nodes=gamma_nodes,
        gamma_coords=global_model.nodes[gamma_nodes], ndof_per_node=ndpn,
        subdomain_ids=subdomain_ids, assembly_ops=assembly_ops,
        transfer_ops=transfer_ops, condensed_global=condensed_global,
        condensed_fine=condensed_fine, fine_systems=fine_systems,
        global_part_systems=global_part_systems, schur_global=schur_global,
        rhs_global=rhs_global, fine_schur_embedded=embedded,
        offset=np.zeros(gamma_dim), _sg_chol=sg_chol)
    scenario.offset = residual_offset(scenario)
    return scenario
