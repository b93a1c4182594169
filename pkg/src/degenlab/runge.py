"""Simultaneous boundary-and-bulk approximation by solutions driven from
Sigma2, plus the interior change-of-unknowns consistency check.

Dictionaries are nested by construction: inputs follow a fixed bit-reversed
ordering of the Sigma2 trace vertices, so the first N entries of a larger
family reproduce the smaller one.  Fits are least squares in mass-weighted
coordinates (dense Cholesky of the small boundary/bulk Gram matrices), with
optional Tikhonov damping; ill-conditioning is reported, never fatal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import (Potentials, SystemAssembly, WeightSpec, assemble,
                       build_cell_groups, weighted_mass, weighted_stiffness)
from .dtn import sigma2_basis_vertices
from .errors import IllConditioned, SubdomainTouchesBoundary
from .forward import poisson
from .fields import random_smooth
from .mesh import TAG_SIGMA1, Mesh


def interior_subbox(mesh: Mesh, fractions=(0.25, 0.75)):
    """Cell-aligned index bounds of a centered sub-box, strictly interior."""
    lo_idx, hi_idx = [], []
    for a in range(mesh.dim):
        ax = mesh.axes[a]
        lo = int(np.searchsorted(ax, ax[0] + fractions[0] * (ax[-1] - ax[0])))
        hi = int(np.searchsorted(ax, ax[0] + fractions[1] * (ax[-1] - ax[0])))
        lo = max(lo, 1)
        hi = min(hi, len(ax) - 2)
        if hi - lo < 1:
            raise SubdomainTouchesBoundary(
                f"axis {a}: interior sub-box needs at least one cell strictly inside")
        lo_idx.append(lo)
        hi_idx.append(hi)
    return lo_idx, hi_idx


def subbox_vertex_ids(mesh: Mesh, lo_idx, hi_idx) -> np.ndarray:
    ranges = [np.arange(lo_idx[a], hi_idx[a] + 1) for a in range(mesh.dim)]
    grids = np.meshgrid(*ranges, indexing="ij")
    flat = np.stack([g.ravel() for g in grids], axis=1)
    return np.ravel_multi_index(flat.T, mesh.vertex_shape())


def _bit_reversed_order(n: int) -> np.ndarray:
    """Deterministic low-discrepancy ordering of n indices."""
    bits = max(1, int(np.ceil(np.log2(max(n, 2)))))
    keys = []
    for i in range(n):
        r = 0
        x = i
        for _ in range(bits):
            r = (r << 1) | (x & 1)
            x >>= 1
        keys.append(r)
    return np.argsort(np.array(keys), kind="stable")


@dataclass
class Dictionary:
    assembly: SystemAssembly
    inputs: np.ndarray        # (n_dir, N) Sigma2 data columns
    solutions: np.ndarray     # (n_vertices, N)
    family: str
    lo_idx: list
    hi_idx: list
    sub_ids: np.ndarray       # global vertex ids of the sub-box grid
    bottom_ids: np.ndarray    # global vertex ids on the bottom face
    gram_sigma1: np.ndarray   # boundary mass over bottom_ids (dense)
    gram_bulk_l2: np.ndarray  # plain mass over sub_ids (dense)
    gram_bulk_h1: np.ndarray  # plain mass + stiffness over sub_ids (dense)

    @property
    def n(self) -> int:
        return self.inputs.shape[1]

    def traces_sigma1(self) -> np.ndarray:
        return self.solutions[self.bottom_ids]

    def values_bulk(self) -> np.ndarray:
        return self.solutions[self.sub_ids]

    def prefix(self, n: int) -> "Dictionary":
        """First-n view; families are nested so this equals a fresh build."""
        if n > self.n:
            raise ValueError("prefix larger than dictionary")
        return Dictionary(
            assembly=self.assembly, inputs=self.inputs[:, :n],
            solutions=self.solutions[:, :n], family=self.family,
            lo_idx=self.lo_idx, hi_idx=self.hi_idx, sub_ids=self.sub_ids,
            bottom_ids=self.bottom_ids, gram_sigma1=self.gram_sigma1,
            gram_bulk_l2=self.gram_bulk_l2, gram_bulk_h1=self.gram_bulk_h1)


def _bottom_vertex_ids(mesh: Mesh) -> np.ndarray:
    coords = mesh.vertex_coords()
    return np.nonzero(np.isclose(coords[:, -1], mesh.axes[-1][0]))[0]


def build_dictionary(assembly: SystemAssembly, n: int, family: str = "hats",
                     fractions=(0.25, 0.75), seed: int = 0,
                     bump_width: float = 0.12) -> Dictionary:
    """N Poisson solutions with cached restrictions to Sigma1 and the sub-box."""
    mesh = assembly.mesh
    verts = sigma2_basis_vertices(mesh)
    order = _bit_reversed_order(len(verts))
    coords = mesh.vertex_coords()
    dir_pos = {int(v): i for i, v in enumerate(assembly.dir_idx)}
    nd = len(assembly.dir_idx)
    inputs = np.zeros((nd, n))
    if family == "hats":
        if n > len(verts):
            raise ValueError(f"only {len(verts)} Sigma2 vertices available")
        for j in range(n):
            inputs[dir_pos[int(verts[order[j]])], j] = 1.0
    elif family == "bumps":
        if n > len(verts):
            raise ValueError(f"only {len(verts)} bump centers available")
        vc = coords[verts]
        rows = np.array([dir_pos[int(v)] for v in verts])
        for j in range(n):
            c = vc[order[j]]
            r2 = np.sum((vc - c) ** 2, axis=1) / bump_width**2
            inputs[rows, j] = np.where(r2 < 1.0,
                                       np.exp(1.0 - 1.0 / np.maximum(1.0 - r2, 1e-300)), 0.0)
    elif family == "random-smooth":
        rows = np.array([dir_pos[int(v)] for v in verts])
        vc = coords[verts]
        for j in range(n):
            f = random_smooth(seed + j, 1.0, mesh.dim, n_modes=5, max_freq=2)
            inputs[rows, j] = np.asarray(f(vc))
    else:
        raise ValueError(f"unknown family {family!r}")

    nv = mesh.n_vertices
    sols = np.empty((nv, n), dtype=np.complex128)
    for j in range(n):
        sols[:, j] = poisson(assembly, _dir_data(assembly, inputs[:, j]), guard=j == 0).u

    lo_idx, hi_idx = interior_subbox(mesh, fractions)
    sub_ids = subbox_vertex_ids(mesh, lo_idx, hi_idx)
    bottom_ids = _bottom_vertex_ids(mesh)
    g_s1 = assembly.sigma1_mass[bottom_ids][:, bottom_ids].toarray().real
    sub = mesh.submesh(lo_idx, hi_idx)
    groups = build_cell_groups(sub, None)
    m_sub = weighted_mass(groups, sub.n_vertices).real
    k_sub = weighted_stiffness(groups, sub.n_vertices).real
    return Dictionary(
        assembly=assembly, inputs=inputs, solutions=sols, family=family,
        lo_idx=lo_idx, hi_idx=hi_idx, sub_ids=sub_ids, bottom_ids=bottom_ids,
        gram_sigma1=g_s1, gram_bulk_l2=m_sub.toarray(),
        gram_bulk_h1=(m_sub + k_sub).toarray())


def _dir_data(assembly: SystemAssembly, column: np.ndarray):
    full = np.zeros(assembly.n_dofs, dtype=np.complex128)
    full[assembly.dir_idx] = column
    return full


def bulk_target(assembly: SystemAssembly, fractions=(0.25, 0.75),
                seed: int = 0, data=None) -> np.ndarray:
    """A genuine local solution on the sub-box: solves the same weighted
    operator with Dirichlet data (random smooth by default) on its boundary.
    Returns nodal values on the sub-box grid."""
    mesh = assembly.mesh
    lo_idx, hi_idx = interior_subbox(mesh, fractions)
    sub = mesh.submesh(lo_idx, hi_idx)
    pots = assembly.potentials
    sub_asm = assemble(sub, assembly.weight, Potentials(V=pots.V), lam=assembly.lam)
    if data is None:
        f = random_smooth(seed, 1.0, mesh.dim, n_modes=5, max_freq=2)
        data = lambda p: np.asarray(f(p))
    sol = poisson(sub_asm, data, guard=False)
    return sol.u


@dataclass
class FitReport:
    coefficients: np.ndarray
    boundary_error: float
    bulk_error: float
    combined_error: float
    alpha: float
    n: int
    topology: str
    condition: float
    meta: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"N": self.n, "alpha": self.alpha, "topology": self.topology,
                "boundaryError": self.boundary_error, "bulkError": self.bulk_error,
                "combinedError": self.combined_error, "condition": self.condition}


def simultaneous_fit(dictionary: Dictionary, target1, target2,
                     alpha: float = 0.0, topology: str = "l2",
                     boundary_only: bool = False) -> FitReport:
    """Tikhonov-damped least squares over dictionary coefficients matching
    the Sigma1 trace and the interior restriction at once.

    target1: callable on boundary coordinates or values on the bottom grid;
    target2: nodal values on the sub-box grid (e.g. from bulk_target)."""
    mesh = dictionary.assembly.mesh
    if callable(target1):
        t1 = np.asarray(target1(mesh.vertex_coords()[dictionary.bottom_ids]),
                        dtype=np.complex128)
    else:
        t1 = np.asarray(target1, dtype=np.complex128)
    t2 = np.asarray(target2, dtype=np.complex128)
    if topology == "l2":
        gb = dictionary.gram_bulk_l2
    elif topology == "h1bulk":
        gb = dictionary.gram_bulk_h1
    else:
        raise ValueError(f"unknown topology {topology!r}")
    l1 = np.linalg.cholesky(dictionary.gram_sigma1)
    l2 = np.linalg.cholesky(gb)
    rows1 = l1.T @ dictionary.traces_sigma1()
    rhs1 = l1.T @ t1
    rows2 = l2.T @ dictionary.values_bulk()
    rhs2 = l2.T @ t2
    if boundary_only:
        design = rows1
        rhs = rhs1
    else:
        design = np.vstack([rows1, rows2])
        rhs = np.concatenate([rhs1, rhs2])
    if alpha > 0.0:
        design = np.vstack([design, np.sqrt(alpha) * np.eye(dictionary.n)])
        rhs = np.concatenate([rhs, np.zeros(dictionary.n)])
    coef, _, rank, sv = np.linalg.lstsq(design, rhs, rcond=None)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    if cond > 1e14:
        warnings.warn(IllConditioned(f"fit condition number {cond:.2e}"))
    def rel(rows, rhsv):
        num = np.linalg.norm(rows @ coef - rhsv)
        den = max(np.linalg.norm(rhsv), 1e-300)
        return float(num / den)
    be = rel(rows1, rhs1)
    ke = rel(rows2, rhs2)
    num = np.linalg.norm(np.vstack([rows1, rows2]) @ coef
                         - np.concatenate([rhs1, rhs2]))
    den = max(np.sqrt(np.linalg.norm(rhs1) ** 2 + np.linalg.norm(rhs2) ** 2), 1e-300)
    return FitReport(coefficients=coef, boundary_error=be, bulk_error=ke,
                     combined_error=float(num / den), alpha=alpha,
                     n=dictionary.n, topology=topology, condition=cond,
                     meta={"rank": int(rank), "boundary_only": boundary_only})


def default_alpha(dictionary: Dictionary, topology: str = "l2") -> float:
    """1e-10 times the largest normal-equation eigenvalue."""
    gb = dictionary.gram_bulk_l2 if topology == "l2" else dictionary.gram_bulk_h1
    t1 = dictionary.traces_sigma1()
    t2 = dictionary.values_bulk()
    normal = t1.conj().T @ dictionary.gram_sigma1 @ t1 + t2.conj().T @ gb @ t2
    return 1e-10 * float(np.linalg.eigvalsh(normal.real)[-1])


# ---------------------------------------------------------------------------
# interior change of unknowns
# ---------------------------------------------------------------------------

def _fd_second_derivative(values: np.ndarray, nodes: np.ndarray, axis: int) -> np.ndarray:
    """Nonuniform 3-point second difference along one axis (interior only)."""
    v = np.moveaxis(values, axis, 0)
    t = nodes
    hm = (t[1:-1] - t[:-2])[(...,) + (None,) * (v.ndim - 1)]
    hp = (t[2:] - t[1:-1])[(...,) + (None,) * (v.ndim - 1)]
    out = 2.0 * (v[:-2] / (hm * (hm + hp)) - v[1:-1] / (hm * hp)
                 + v[2:] / (hp * (hm + hp)))
    return np.moveaxis(out, 0, axis)


def liouville_check(u_sub: np.ndarray, mesh: Mesh, lo_idx, hi_idx,
                    weight: WeightSpec, V=None) -> dict:
    """Residual of the flattened interior equation after the change of
    unknowns w = (weight)^(1/2) u, with the induced zeroth-order term.

    u_sub: nodal values on the sub-box grid; the sub-box must stay away from
    the degenerate boundary (weight bounded below)."""
    axes = [mesh.axes[a][lo_idx[a]:hi_idx[a] + 1] for a in range(mesh.dim)]
    shape = tuple(len(a) for a in axes)
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    if weight.mode == "vertical":
        if axes[-1][0] <= 0.0:
            raise SubdomainTouchesBoundary("sub-box touches the degenerate face")
        rho = pts[:, -1] ** (0.5 * weight.exponent)
        beta = 0.5 * weight.exponent
        qterm = beta * (beta - 1.0) / pts[:, -1] ** 2
    else:
        dval = weight.distance_value(mesh, pts)
        if np.min(dval) <= 0.0:
            raise SubdomainTouchesBoundary("sub-box touches the boundary")
        rho = dval ** (0.5 * weight.exponent)
        rho_grid = rho.reshape(shape)
        lap_rho = np.zeros(tuple(s - 2 for s in shape))
        for a in range(mesh.dim):
            sl = tuple(slice(1, -1) if b != a else slice(None) for b in range(mesh.dim))
            lap_rho += _fd_second_derivative(rho_grid[sl], axes[a], a)
        inner = tuple(slice(1, -1) for _ in range(mesh.dim))
        qterm_grid = np.zeros(shape)
        qterm_grid[inner] = lap_rho / rho_grid[inner]
        qterm = qterm_grid.ravel()
    w = (rho * np.asarray(u_sub)).reshape(shape)
    lap = np.zeros(tuple(s - 2 for s in shape), dtype=w.dtype)
    scale = 0.0
    for a in range(mesh.dim):
        sl = tuple(slice(1, -1) if b != a else slice(None) for b in range(mesh.dim))
        part = _fd_second_derivative(w[sl], axes[a], a)
        lap += part
        scale += float(np.linalg.norm(part))  # per-axis size before cancellation
    inner = tuple(slice(1, -1) for _ in range(mesh.dim))
    vvals = np.asarray(V(pts)) if V is not None else np.zeros(len(pts))
    zer = ((qterm + vvals).reshape(shape) * w)[inner]
    res = -lap + zer
    scale += float(np.linalg.norm(zer))
    rel = float(np.linalg.norm(res) / max(scale, 1e-300))
    return {"residual": rel, "abs": float(np.linalg.norm(res)),
            "scale": float(scale)}
