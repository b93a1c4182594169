"""Weighted bilinear-form assembly on graded box meshes.

Multilinear (Q1) elements on tensor-product cells.  The degenerate vertical
weight is integrated exactly per layer (moment-exact rules from
`quadrature`), so assembled element integrals are exact for nodally
interpolated coefficients; coefficient fields enter through their Q1
interpolants.  Matrix convention: entry (i, j) pairs test function i with
trial function j, i.e. the discrete form B(phi_j, phi_i).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .errors import (InvalidPotential, MagneticWithDegenerateWeight,
                     SolverBreakdown)
from .mesh import TAG_REST, TAG_SIGMA1, TAG_SIGMA2, Mesh
from .quadrature import gauss_legendre_rule, weighted_gauss_rule

# ---------------------------------------------------------------------------
# weight specification
# ---------------------------------------------------------------------------

_CLAMP_H = None  # quintic coefficients of the smooth clamp, solved once


def _clamp_poly():
    global _CLAMP_H
    if _CLAMP_H is None:
        # quintic on [1/2, 1]: value/slope/curvature (0.5, 1, 0) -> (0.75, 0, 0)
        a, b, target = 0.5, 1.0, 0.75
        pows = np.arange(6)
        rows = []
        for t, order in ((a, 0), (a, 1), (a, 2), (b, 0), (b, 1), (b, 2)):
            coef = np.zeros(6)
            for p in range(6):
                if p >= order:
                    coef[p] = np.prod(pows[p - order + 1:p + 1]) * t ** (p - order)
            rows.append(coef)
        rhs = np.array([0.5, 1.0, 0.0, target, 0.0, 0.0])
        _CLAMP_H = np.linalg.solve(np.array(rows), rhs)
    return _CLAMP_H


def smooth_clamp(t):
    """C^2 clamp: identity below 1/2, saturates to 0.75 above 1."""
    t = np.asarray(t, dtype=float)
    c = _clamp_poly()
    out = np.where(t <= 0.5, t, 0.75)
    mid = (t > 0.5) & (t < 1.0)
    tm = t[mid]
    out[mid] = sum(c[p] * tm**p for p in range(6))
    return out


@dataclass(frozen=True)
class WeightSpec:
    """Degenerate weight: s in (0,1); 'vertical' means x_d^(1-2s),
    'distance' the clamped boundary distance to the same power."""

    s: float
    mode: str = "vertical"
    clamp: float | None = None

    def __post_init__(self):
        if not (0.0 < self.s < 1.0):
            raise ValueError(f"s must lie in (0,1), got {self.s}")
        if self.mode not in ("vertical", "distance"):
            raise ValueError(f"unknown weight mode {self.mode!r}")

    @property
    def exponent(self) -> float:
        return 1.0 - 2.0 * self.s

    def clamp_value(self, mesh: Mesh) -> float:
        if self.clamp is not None:
            return float(self.clamp)
        inradius = min(L / 2.0 for L in mesh.lengths)
        return inradius / 2.0

    def distance_value(self, mesh: Mesh, pts: np.ndarray) -> np.ndarray:
        """Clamped distance-to-boundary of the box."""
        lo = np.array([a[0] for a in mesh.axes])
        hi = np.array([a[-1] for a in mesh.axes])
        d = np.minimum(pts - lo, hi - pts).min(axis=1)
        c = self.clamp_value(mesh)
        return c * smooth_clamp(d / c)

    def values(self, mesh: Mesh, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        if self.mode == "vertical":
            return np.maximum(pts[:, -1], 0.0) ** self.exponent
        return self.distance_value(mesh, pts) ** self.exponent

    def descriptor(self) -> dict:
        return {"s": self.s, "mode": self.mode, "clamp": self.clamp}


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

@dataclass
class Potentials:
    """Bulk potential V on the box, boundary potential q on the bottom face
    (a function of the horizontal coordinates), optional vector potential A."""

    V: object | None = None
    q: object | None = None
    A: tuple | None = None

    def v_nodal(self, mesh: Mesh) -> np.ndarray:
        if self.V is None:
            return np.zeros(mesh.n_vertices)
        return np.asarray(self.V(mesh.vertex_coords()), dtype=float)

    def q_nodal(self, mesh: Mesh) -> np.ndarray:
        out = np.zeros(mesh.n_vertices)
        if self.q is None:
            return out
        coords = mesh.vertex_coords()
        bottom = np.isclose(coords[:, -1], mesh.axes[-1][0])
        out[bottom] = np.asarray(self.q(coords[bottom, :-1]), dtype=float)
        return out

    def a_nodal(self, mesh: Mesh) -> np.ndarray | None:
        if self.A is None:
            return None
        coords = mesh.vertex_coords()
        comps = [np.asarray(c(coords), dtype=float) for c in self.A]
        if len(comps) != mesh.dim:
            raise InvalidPotential("A must have one component per axis")
        return np.stack(comps, axis=1)

    def validate_magnetic(self, mesh: Mesh, s: float) -> None:
        if self.A is None:
            return
        if abs(s - 0.5) > 1e-14:
            raise MagneticWithDegenerateWeight(
                "magnetic potentials are assembled only at s = 1/2")
        a = self.a_nodal(mesh)
        scale = max(np.max(np.abs(a)), 1.0)
        coords = mesh.vertex_coords()
        for ax in range(mesh.dim):
            lo, hi = mesh.axes[ax][0], mesh.axes[ax][-1]
            on_wall = np.isclose(coords[:, ax], lo) | np.isclose(coords[:, ax], hi)
            if np.max(np.abs(a[on_wall, ax]), initial=0.0) > 1e-10 * scale:
                raise InvalidPotential(
                    f"normal trace of A does not vanish on walls of axis {ax}")

    def descriptor(self) -> dict:
        def one(f):
            if f is None:
                return None
            return getattr(f, "params", None) or {"family": "opaque"}
        return {"V": one(self.V), "q": one(self.q),
                "A": None if self.A is None else [one(c) for c in self.A]}


# ---------------------------------------------------------------------------
# cell quadrature groups
# ---------------------------------------------------------------------------

@dataclass
class CellGroup:
    gids: np.ndarray    # (nc, nl) global vertex ids
    qw: np.ndarray      # (nc, nq) weights incl. the weighted measure
    phi: np.ndarray     # (nq, nl)
    dphi: np.ndarray    # (nq, nl, dim) global-coordinate gradients
    pts: np.ndarray     # (nc, nq, dim)


def _axis_segments(mesh: Mesh, weight: WeightSpec | None, axis: int, n: int):
    """Per-axis 1D rule segments: (cell indices, local nodes, abs weights,
    singular flag).  Local nodes live in [0,1] relative to each cell."""
    nodes = mesh.axes[axis]
    ncell = len(nodes) - 1
    segs = []
    vertical = axis == mesh.dim - 1
    if weight is not None and weight.mode == "vertical" and vertical:
        for k in range(ncell):
            a, b = nodes[k], nodes[k + 1]
            x, w = weighted_gauss_rule((a, b), weight.exponent, n)
            segs.append((np.array([k]), (x - a) / (b - a), w, True))
        return segs
    if weight is not None and weight.mode == "distance":
        # walls on this axis carry the singular factor; interior cells do not
        lo_wall, hi_wall = nodes[0], nodes[-1]
        if vertical:
            cell_iter = [np.array([k]) for k in range(ncell)]
        else:
            interior = np.arange(1, ncell - 1)
            cell_iter = [np.array([0])] + ([interior] if len(interior) else []) + [np.array([ncell - 1])]
        for cells in cell_iter:
            k = cells[0]
            a, b = nodes[k], nodes[k + 1]
            if k == 0:
                x, w = weighted_gauss_rule((a - lo_wall, b - lo_wall), weight.exponent, n)
                segs.append((cells, (x + lo_wall - a) / (b - a), w, True))
            elif k == ncell - 1:
                x, w = weighted_gauss_rule((hi_wall - b, hi_wall - a), weight.exponent, n)
                x = hi_wall - x[::-1]
                segs.append((cells, (x - a) / (b - a), w[::-1].copy(), True))
            else:
                x, w = gauss_legendre_rule((a, b), n)
                segs.append((cells, (x - a) / (b - a), w, False))
        return segs
    # unweighted axis: one segment for all cells (uniform) or per layer
    if vertical and mesh.grading not in (None, 1.0):
        for k in range(ncell):
            a, b = nodes[k], nodes[k + 1]
            x, w = gauss_legendre_rule((a, b), n)
            segs.append((np.array([k]), (x - a) / (b - a), w, False))
        return segs
    h = nodes[1] - nodes[0]
    x, w = gauss_legendre_rule((0.0, h), n)
    segs.append((np.arange(ncell), x / h, w, False))
    return segs


def build_cell_groups(mesh: Mesh, weight: WeightSpec | None,
                      n_horiz: int = 3, n_vert: int = 3) -> list[CellGroup]:
    dim = mesh.dim
    vshape = mesh.vertex_shape()
    offsets = np.array(list(np.ndindex(*(2,) * dim)))  # (nl, dim)
    seg_lists = []
    for a in range(dim):
        n = n_vert if a == dim - 1 else n_horiz
        seg_lists.append(_axis_segments(mesh, weight, a, n))
    groups = []
    for choice in np.ndindex(*[len(s) for s in seg_lists]):
        segs = [seg_lists[a][choice[a]] for a in range(dim)]
        cell_axes = [s[0] for s in segs]
        nq_axes = [len(s[1]) for s in segs]
        nq = int(np.prod(nq_axes))
        nl = 2 ** dim
        # per-axis 1D basis tables at the local nodes
        n1d, d1d, scale = [], [], []
        for a in range(dim):
            t = segs[a][1]
            k = cell_axes[a][0]
            h = mesh.axes[a][k + 1] - mesh.axes[a][k]
            n1d.append(np.stack([1.0 - t, t], axis=1))        # (nq_a, 2)
            d1d.append(np.stack([-np.ones_like(t), np.ones_like(t)], axis=1) / h)
            scale.append(h)
        qmulti = list(np.ndindex(*nq_axes))
        phi = np.empty((nq, nl))
        dphi = np.empty((nq, nl, dim))
        for qi, qm in enumerate(qmulti):
            for l in range(nl):
                v = 1.0
                for a in range(dim):
                    v *= n1d[a][qm[a], offsets[l, a]]
                phi[qi, l] = v
                for a in range(dim):
                    g = d1d[a][qm[a], offsets[l, a]]
                    for b in range(dim):
                        if b != a:
                            g *= n1d[b][qm[b], offsets[l, b]]
                    dphi[qi, l, a] = g
        # tensor quadrature weights (shared by all cells of the group)
        base_w = np.ones(nq)
        for qi, qm in enumerate(qmulti):
            for a in range(dim):
                base_w[qi] *= segs[a][2][qm[a]]
        # cells of the group and their global points
        cell_grids = np.meshgrid(*cell_axes, indexing="ij")
        cells = np.stack([g.ravel() for g in cell_grids], axis=1)  # (nc, dim)
        nc = cells.shape[0]
        gids = np.empty((nc, nl), dtype=np.int64)
        for l in range(nl):
            gids[:, l] = np.ravel_multi_index((cells + offsets[l]).T, vshape)
        pts = np.empty((nc, nq, dim))
        for a in range(dim):
            lo = mesh.axes[a][cells[:, a]]
            tq = np.array([segs[a][1][qm[a]] for qm in qmulti])
            pts[:, :, a] = lo[:, None] + tq[None, :] * scale[a]
        qw = np.broadcast_to(base_w, (nc, nq)).copy()
        if weight is not None and weight.mode == "distance":
            flat = pts.reshape(-1, dim)
            actual = weight.distance_value(mesh, flat) ** weight.exponent
            model = np.ones(len(flat))
            for a in range(dim):
                if segs[a][3]:
                    lo_wall, hi_wall = mesh.axes[a][0], mesh.axes[a][-1]
                    k = cell_axes[a][0]
                    near_lo = (mesh.axes[a][k] - lo_wall) < (hi_wall - mesh.axes[a][k + 1])
                    dist = (flat[:, a] - lo_wall) if near_lo else (hi_wall - flat[:, a])
                    model *= dist ** weight.exponent
            qw *= (actual / model).reshape(nc, nq)
        groups.append(CellGroup(gids=gids, qw=qw, phi=phi, dphi=dphi, pts=pts))
    return groups


# ---------------------------------------------------------------------------
# matrix builders
# ---------------------------------------------------------------------------

def _coef_at_q(group: CellGroup, nodal: np.ndarray) -> np.ndarray:
    return np.einsum("ql,cl->cq", group.phi, nodal[group.gids])


def _accumulate(groups, nv, term_fn) -> sp.csr_matrix:
    rows, cols, data = [], [], []
    for g in groups:
        loc = term_fn(g)
        nc, nl = g.gids.shape
        rows.append(np.repeat(g.gids, nl, axis=1).ravel())
        cols.append(np.tile(g.gids, (1, nl)).ravel())
        data.append(loc.ravel())
    mat = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nv, nv), dtype=np.complex128)
    return mat.tocsr()


def weighted_stiffness(groups, nv) -> sp.csr_matrix:
    return _accumulate(groups, nv, lambda g: _kernels.local_matrices(
        g.qw, g.phi, g.dphi, 1.0, 0.0))


def weighted_mass(groups, nv, coef_nodal=None) -> sp.csr_matrix:
    def term(g):
        mc = 1.0 if coef_nodal is None else _coef_at_q(g, coef_nodal)
        return _kernels.local_matrices(g.qw, g.phi, g.dphi, 0.0, mc)
    return _accumulate(groups, nv, term)


def magnetic_matrix(groups, nv, a_nodal) -> sp.csr_matrix:
    """i-times antisymmetric pairing of A with gradients (Hermitian block)."""
    def term(g):
        dim = g.dphi.shape[2]
        aq = np.stack([_coef_at_q(g, a_nodal[:, a]) for a in range(dim)], axis=2)
        return _kernels.local_matrices(g.qw, g.phi, g.dphi, 0.0, 0.0,
                                       d1=-1j * aq, d2=1j * aq)
    return _accumulate(groups, nv, term)


def drift_matrix(groups, nv, xi) -> sp.csr_matrix:
    """Entries pairing test values with xi . grad(trial) under the weighted measure."""
    xi = np.asarray(xi, dtype=np.complex128)
    def term(g):
        nc, nq = g.qw.shape
        d1 = np.broadcast_to(xi, (nc, nq, len(xi)))
        return _kernels.local_matrices(g.qw, g.phi, g.dphi, 0.0, 0.0, d1=d1)
    return _accumulate(groups, nv, term)


def bulk_load(groups, nv, f0=None, ftilde=None) -> np.ndarray:
    """Weighted load: integral of w*(F0 conj(v) + Ftilde . grad conj(v))."""
    rhs = np.zeros(nv, dtype=np.complex128)
    for g in groups:
        nc, nq = g.qw.shape
        flat = g.pts.reshape(-1, g.pts.shape[2])
        if f0 is not None:
            vals = np.asarray(f0(flat), dtype=np.complex128).reshape(nc, nq)
            np.add.at(rhs, g.gids, np.einsum("cq,ql->cl", g.qw * vals, g.phi))
        if ftilde is not None:
            vals = np.asarray(ftilde(flat), dtype=np.complex128).reshape(nc, nq, -1)
            np.add.at(rhs, g.gids,
                      np.einsum("cqa,cq,qla->cl", vals, g.qw, g.dphi))
    return rhs


# ---------------------------------------------------------------------------
# boundary facet quadrature
# ---------------------------------------------------------------------------

def _facet_rule(mesh: Mesh, f: int, n: int = 3):
    """Tensor GL rule and Q1 trace basis on one boundary facet.

    Returns (points (nq, dim), weights (nq,), basis (nq, 2^(dim-1)), vids)."""
    ax = mesh.facet_axis[f]
    side = mesh.facet_side[f]
    idx = mesh.facet_index[f]
    fixed = mesh.axes[ax][0] if side == 0 else mesh.axes[ax][-1]
    trans = [a for a in range(mesh.dim) if a != ax]
    rules = []
    for t, a in enumerate(trans):
        i = idx[t]
        rules.append(gauss_legendre_rule((mesh.axes[a][i], mesh.axes[a][i + 1]), n))
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wgrids = np.meshgrid(*[r[1] for r in rules], indexing="ij")
    nq = grids[0].size
    pts = np.empty((nq, mesh.dim))
    pts[:, ax] = fixed
    for t, a in enumerate(trans):
        pts[:, a] = grids[t].ravel()
    wts = np.ones(nq)
    for wg in wgrids:
        wts *= wg.ravel()
    basis = np.ones((nq, 2 ** len(trans)))
    offsets = np.array(list(np.ndindex(*(2,) * len(trans))))
    for t, a in enumerate(trans):
        i = idx[t]
        lo, hi = mesh.axes[a][i], mesh.axes[a][i + 1]
        tt = (grids[t].ravel() - lo) / (hi - lo)
        n1 = np.stack([1.0 - tt, tt], axis=1)
        for l in range(offsets.shape[0]):
            basis[:, l] *= n1[:, offsets[l, t]]
    return pts, wts, basis, mesh.facet_vertex_ids(f)


def boundary_mass(mesh: Mesh, facets, coef_nodal=None, n: int = 3) -> sp.csr_matrix:
    nv = mesh.n_vertices
    if len(facets) == 0:
        return sp.csr_matrix((nv, nv), dtype=np.complex128)
    rows, cols, data = [], [], []
    for f in facets:
        _, wts, basis, vids = _facet_rule(mesh, f, n)
        if coef_nodal is None:
            cq = np.ones(len(wts))
        else:
            cq = basis @ coef_nodal[vids]
        loc = np.einsum("q,qi,qj->ij", wts * cq, basis, basis)
        nl = len(vids)
        rows.append(np.repeat(vids, nl))
        cols.append(np.tile(vids, nl))
        data.append(loc.ravel())
    return sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nv, nv), dtype=np.complex128).tocsr()


def boundary_load(mesh: Mesh, facets, fn, n: int = 3) -> np.ndarray:
    rhs = np.zeros(mesh.n_vertices, dtype=np.complex128)
    for f in facets:
        pts, wts, basis, vids = _facet_rule(mesh, f, n)
        vals = np.asarray(fn(pts), dtype=np.complex128)
        np.add.at(rhs, vids, (wts * vals) @ basis)
    return rhs


def boundary_quadrature(mesh: Mesh, facets, n: int = 4):
    """Concatenated boundary rule (points, weights) over the given facets."""
    pts, wts = [], []
    for f in facets:
        p, w, _, _ = _facet_rule(mesh, f, n)
        pts.append(p)
        wts.append(w)
    return np.concatenate(pts), np.concatenate(wts)


# ---------------------------------------------------------------------------
# system assembly
# ---------------------------------------------------------------------------

@dataclass
class SystemAssembly:
    mesh: Mesh
    weight: WeightSpec
    potentials: Potentials
    lam: float
    stiffness: sp.csr_matrix
    mass_w: sp.csr_matrix
    mass_v: sp.csr_matrix
    mass_a2: sp.csr_matrix | None
    magnetic: sp.csr_matrix | None
    boundary_q: sp.csr_matrix
    sigma1_mass: sp.csr_matrix
    matrix: sp.csr_matrix
    free_idx: np.ndarray
    dir_idx: np.ndarray
    sigma2_dir_mask: np.ndarray  # over dir_idx: True where data f2 applies
    groups: list = field(repr=False, default=None)
    _lu: object = field(default=None, repr=False)
    _nearest_ev: dict = field(default_factory=dict, repr=False)

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_vertices

    def reduced(self):
        A = self.matrix
        return (A[self.free_idx][:, self.free_idx],
                A[self.free_idx][:, self.dir_idx])

    def factorization(self):
        if self._lu is None:
            aff, _ = self.reduced()
            try:
                self._lu = spla.splu(aff.tocsc())
            except RuntimeError as exc:
                raise SolverBreakdown(f"sparse factorization failed: {exc}") from exc
        return self._lu

    def hermitian_defect(self) -> float:
        a = self.matrix
        num = spla.norm(a - a.getH())
        den = spla.norm(a)
        return float(num / den) if den > 0 else 0.0

    def digest_payload(self) -> dict:
        return {
            "mesh": self.mesh.descriptor(),
            "weight": self.weight.descriptor(),
            "potentials": self.potentials.descriptor(),
            "lambda": self.lam,
        }


def classify_dofs(mesh: Mesh):
    """(free, dirichlet, sigma2-mask): a vertex is constrained iff it touches
    a Sigma2 or Rest facet; data applies where it touches Sigma2 but no Rest."""
    tag_sets = mesh.vertex_tag_sets()
    dir_ids, mask = [], []
    for v, tags in sorted(tag_sets.items()):
        if TAG_SIGMA2 in tags or TAG_REST in tags:
            dir_ids.append(v)
            mask.append(TAG_SIGMA2 in tags and TAG_REST not in tags)
    dir_idx = np.array(dir_ids, dtype=np.int64)
    all_idx = np.arange(mesh.n_vertices)
    free_idx = np.setdiff1d(all_idx, dir_idx, assume_unique=True)
    return free_idx, dir_idx, np.array(mask, dtype=bool)


def assemble(mesh: Mesh, weight: WeightSpec, potentials: Potentials | None = None,
             lam: float = 0.0, n_quad: int = 3) -> SystemAssembly:
    """Discrete operator of the weighted form with Robin boundary potential.

    Sign/normal conventions: outward normal everywhere; the strong form is
    -div(w grad u) + w (V + |A|^2) u + magnetic terms, with natural condition
    w du/dnu + q u = f1 on the bottom face.
    """
    potentials = potentials or Potentials()
    potentials.validate_magnetic(mesh, weight.s)
    groups = build_cell_groups(mesh, weight, n_horiz=n_quad, n_vert=n_quad)
    nv = mesh.n_vertices
    K = weighted_stiffness(groups, nv)
    Mw = weighted_mass(groups, nv)
    MV = weighted_mass(groups, nv, potentials.v_nodal(mesh)) \
        if potentials.V is not None else sp.csr_matrix((nv, nv), dtype=np.complex128)
    sigma1 = mesh.facets_with_tag(TAG_SIGMA1)
    S1 = boundary_mass(mesh, sigma1) if len(sigma1) else sp.csr_matrix((nv, nv), dtype=np.complex128)
    Sq = boundary_mass(mesh, sigma1, potentials.q_nodal(mesh)) \
        if (potentials.q is not None and len(sigma1)) else sp.csr_matrix((nv, nv), dtype=np.complex128)
    a_nodal = potentials.a_nodal(mesh)
    if a_nodal is not None:
        Mag = magnetic_matrix(groups, nv, a_nodal)
        a2 = np.sum(a_nodal**2, axis=1)
        MA2 = weighted_mass(groups, nv, a2)
    else:
        Mag = None
        MA2 = None
    full = K + MV + Sq - lam * Mw
    if Mag is not None:
        full = full + Mag + MA2
    free_idx, dir_idx, mask = classify_dofs(mesh)
    return SystemAssembly(
        mesh=mesh, weight=weight, potentials=potentials, lam=lam,
        stiffness=K, mass_w=Mw, mass_v=MV, mass_a2=MA2, magnetic=Mag,
        boundary_q=Sq, sigma1_mass=S1, matrix=full.tocsr(),
        free_idx=free_idx, dir_idx=dir_idx, sigma2_dir_mask=mask,
        groups=groups)


# ---------------------------------------------------------------------------
# norms, interpolation, extension
# ---------------------------------------------------------------------------

@dataclass
class WeightedNorms:
    l2: float
    h1: float
    h1_semi: float
    l2_sigma1: float
    l2_boundary: float


def weighted_norms(u: np.ndarray, mesh: Mesh, weight: WeightSpec,
                   groups=None) -> WeightedNorms:
    u = np.asarray(u, dtype=np.complex128)
    groups = groups or build_cell_groups(mesh, weight)
    l2sq = 0.0
    semisq = 0.0
    for g in groups:
        uq = np.einsum("ql,cl->cq", g.phi, u[g.gids])
        l2sq += float(np.sum(g.qw * np.abs(uq) ** 2))
        gq = np.einsum("qla,cl->cqa", g.dphi, u[g.gids])
        semisq += float(np.sum(g.qw * np.sum(np.abs(gq) ** 2, axis=2)))
    bmass = boundary_mass(mesh, np.arange(len(mesh.facet_tag)))
    s1mass = boundary_mass(mesh, mesh.facets_with_tag(TAG_SIGMA1))
    l2b = float(np.real(np.conj(u) @ (bmass @ u)))
    l2s1 = float(np.real(np.conj(u) @ (s1mass @ u)))
    return WeightedNorms(
        l2=np.sqrt(l2sq), h1=np.sqrt(l2sq + semisq), h1_semi=np.sqrt(semisq),
        l2_sigma1=np.sqrt(max(l2s1, 0.0)), l2_boundary=np.sqrt(max(l2b, 0.0)))


def field_norms(fn, grad_fn, mesh: Mesh, weight: WeightSpec,
                n_horiz: int = 4, n_vert: int = 4) -> WeightedNorms:
    """Weighted norms of an analytic field via quadrature (no interpolation)."""
    groups = build_cell_groups(mesh, weight, n_horiz=n_horiz, n_vert=n_vert)
    l2sq = semisq = 0.0
    for g in groups:
        flat = g.pts.reshape(-1, mesh.dim)
        vals = np.asarray(fn(flat)).reshape(g.qw.shape)
        l2sq += float(np.sum(g.qw * np.abs(vals) ** 2))
        if grad_fn is not None:
            gv = np.asarray(grad_fn(flat)).reshape(*g.qw.shape, mesh.dim)
            semisq += float(np.sum(g.qw * np.sum(np.abs(gv) ** 2, axis=2)))
    bpts, bwts = boundary_quadrature(mesh, np.arange(len(mesh.facet_tag)))
    l2b = float(np.sum(bwts * np.abs(np.asarray(fn(bpts))) ** 2))
    s1 = mesh.facets_with_tag(TAG_SIGMA1)
    if len(s1):
        spts, swts = boundary_quadrature(mesh, s1)
        l2s1 = float(np.sum(swts * np.abs(np.asarray(fn(spts))) ** 2))
    else:
        l2s1 = 0.0
    return WeightedNorms(
        l2=np.sqrt(l2sq), h1=np.sqrt(l2sq + semisq), h1_semi=np.sqrt(semisq),
        l2_sigma1=np.sqrt(l2s1), l2_boundary=np.sqrt(l2b))


def _locate(mesh: Mesh, pts: np.ndarray):
    cells = np.empty((pts.shape[0], mesh.dim), dtype=np.int64)
    local = np.empty_like(pts)
    for a in range(mesh.dim):
        ax = mesh.axes[a]
        i = np.clip(np.searchsorted(ax, pts[:, a], side="right") - 1, 0, len(ax) - 2)
        cells[:, a] = i
        local[:, a] = (pts[:, a] - ax[i]) / (ax[i + 1] - ax[i])
    return cells, local


def evaluate_fe(u: np.ndarray, mesh: Mesh, pts: np.ndarray) -> np.ndarray:
    """Values of the Q1 interpolant with nodal coefficients u at points."""
    pts = np.atleast_2d(pts)
    cells, local = _locate(mesh, pts)
    vshape = mesh.vertex_shape()
    offsets = np.array(list(np.ndindex(*(2,) * mesh.dim)))
    out = np.zeros(pts.shape[0], dtype=np.asarray(u).dtype)
    for l in range(offsets.shape[0]):
        w = np.ones(pts.shape[0])
        for a in range(mesh.dim):
            t = local[:, a]
            w = w * (t if offsets[l, a] else 1.0 - t)
        vid = np.ravel_multi_index((cells + offsets[l]).T, vshape)
        out += w * np.asarray(u)[vid]
    return out


def evaluate_fe_grad(u: np.ndarray, mesh: Mesh, pts: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(pts)
    cells, local = _locate(mesh, pts)
    vshape = mesh.vertex_shape()
    offsets = np.array(list(np.ndindex(*(2,) * mesh.dim)))
    out = np.zeros((pts.shape[0], mesh.dim), dtype=np.asarray(u).dtype)
    h = [np.diff(mesh.axes[a]) for a in range(mesh.dim)]
    for l in range(offsets.shape[0]):
        vid = np.ravel_multi_index((cells + offsets[l]).T, vshape)
        uv = np.asarray(u)[vid]
        for a in range(mesh.dim):
            w = np.ones(pts.shape[0])
            for b in range(mesh.dim):
                t = local[:, b]
                if b == a:
                    w = w * (1.0 if offsets[l, b] else -1.0) / h[b][cells[:, b]]
                else:
                    w = w * (t if offsets[l, b] else 1.0 - t)
            out[:, a] += w * uv
    return out


def extend_trace(g, mesh: Mesh, weight: WeightSpec) -> np.ndarray:
    """Discrete weighted-harmonic extension of boundary data.

    g is a callable on coordinates or a nodal array (read at boundary ids).
    Solves the zero-potential problem with Dirichlet data on every boundary
    vertex; the returned nodal field reproduces g on the boundary."""
    groups = build_cell_groups(mesh, weight)
    nv = mesh.n_vertices
    K = weighted_stiffness(groups, nv)
    bd = np.array(sorted(mesh.vertex_tag_sets().keys()), dtype=np.int64)
    coords = mesh.vertex_coords()
    if callable(g):
        gb = np.asarray(g(coords[bd]), dtype=np.complex128)
    else:
        gb = np.asarray(g, dtype=np.complex128)[bd]
    free = np.setdiff1d(np.arange(nv), bd, assume_unique=True)
    u = np.zeros(nv, dtype=np.complex128)
    u[bd] = gb
    rhs = -K[free][:, bd] @ gb
    try:
        u[free] = spla.spsolve(K[free][:, free].tocsc(), rhs)
    except RuntimeError as exc:
        raise SolverBreakdown(f"trace extension solve failed: {exc}") from exc
    return u
