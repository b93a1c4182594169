"""Mixed Dirichlet/Robin solves, the Poisson operator and spectral guards.

Conventions: outward normal in every emitted quantity; Dirichlet constraints
are eliminated symmetrically (never penalized); the spectral shift is guarded
against the nearest discrete eigenvalue of the weighted pencil.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import SystemAssembly, boundary_load, bulk_load, weighted_norms
from .errors import EigsolverNoConvergence, SolverBreakdown, ZeroIsEigenvalue
from .mesh import TAG_SIGMA1

_GUARD_REL = 1e-8
_RESIDUAL_TOL = 1e-10


@dataclass
class MixedData:
    """Dirichlet values on Sigma2, Robin right-hand side on Sigma1, bulk load.

    f2: callable on coordinates or nodal array; f1: callable on boundary
    coordinates; load f(v) = (v, w F0) + (grad v, w Ftilde) with F0/Ftilde
    callables (the Riesz pair of the bulk functional)."""

    f2: object | None = None
    f1: object | None = None
    F0: object | None = None
    Ftilde: object | None = None


@dataclass
class Solution:
    u: np.ndarray
    residual: float
    assembly: SystemAssembly
    bulk_rhs: np.ndarray = field(repr=False, default=None)
    report: dict = field(default_factory=dict)


def _dirichlet_values(assembly: SystemAssembly, f2) -> np.ndarray:
    vals = np.zeros(len(assembly.dir_idx), dtype=np.complex128)
    if f2 is None:
        return vals
    if callable(f2):
        coords = assembly.mesh.vertex_coords()[assembly.dir_idx]
        raw = np.asarray(f2(coords), dtype=np.complex128)
    else:
        raw = np.asarray(f2, dtype=np.complex128)[assembly.dir_idx]
    vals[assembly.sigma2_dir_mask] = raw[assembly.sigma2_dir_mask]
    return vals


def nearest_eigenvalue(assembly: SystemAssembly, sigma: float | None = None) -> float:
    """Generalized eigenvalue of (form matrix, weighted mass) nearest sigma
    (default: the assembly's own shift), via shift-invert iteration."""
    sigma = assembly.lam if sigma is None else float(sigma)
    cached = assembly._nearest_ev.get(sigma)
    if cached is not None:
        return cached
    a0 = (assembly.matrix + assembly.lam * assembly.mass_w).tocsc()
    fi = assembly.free_idx
    aff = a0[fi][:, fi]
    mff = assembly.mass_w.tocsc()[fi][:, fi]
    herm = spla.norm(aff - aff.getH()) <= 1e-10 * max(spla.norm(aff), 1e-300)
    if not herm:
        raise EigsolverNoConvergence("eigenvalue guard requires a Hermitian form")
    last_exc = None
    for shift in (sigma, sigma * (1 + 1e-10) + 1e-10):
        try:
            vals = spla.eigsh(aff, k=1, M=mff, sigma=shift,
                              which="LM", return_eigenvectors=False, tol=1e-12)
            ev = float(np.real(vals[0]))
            assembly._nearest_ev[sigma] = ev
            return ev
        except spla.ArpackNoConvergence as exc:
            last_exc = exc
        except RuntimeError as exc:
            # singular shifted matrix: sigma is (numerically) an eigenvalue
            if "singular" in str(exc).lower() or "exactly" in str(exc).lower():
                assembly._nearest_ev[sigma] = sigma
                return sigma
            last_exc = exc
    raise EigsolverNoConvergence(f"shift-invert failed near {sigma}: {last_exc}")


def guard_shift(assembly: SystemAssembly) -> None:
    ev = nearest_eigenvalue(assembly)
    if abs(assembly.lam - ev) <= _GUARD_REL * (1.0 + abs(assembly.lam)):
        raise ZeroIsEigenvalue(
            f"shift {assembly.lam} within guard distance of eigenvalue {ev}")


def solve_mixed(assembly: SystemAssembly, data: MixedData,
                guard: bool = True) -> Solution:
    """Constrained solve of the assembled system with the given data.

    Reports the a-priori quotient |u|_H1w / (|F| + |f1| + |f2|) per run."""
    if guard:
        guard_shift(assembly)
    mesh = assembly.mesh
    nv = assembly.n_dofs
    b_bulk = np.zeros(nv, dtype=np.complex128)
    if data.F0 is not None or data.Ftilde is not None:
        b_bulk = bulk_load(assembly.groups, nv, data.F0, data.Ftilde)
    b = b_bulk.copy()
    if data.f1 is not None:
        b += boundary_load(mesh, mesh.facets_with_tag(TAG_SIGMA1), data.f1)
    u = np.zeros(nv, dtype=np.complex128)
    gd = _dirichlet_values(assembly, data.f2)
    u[assembly.dir_idx] = gd
    aff, afd = assembly.reduced()
    rhs = b[assembly.free_idx] - afd @ gd
    lu = assembly.factorization()
    uf = lu.solve(rhs)
    res = np.linalg.norm(aff @ uf - rhs)
    scale = max(np.linalg.norm(rhs), 1e-300)
    if res / scale > _RESIDUAL_TOL:
        uf, info = spla.gmres(aff, rhs, x0=uf, rtol=_RESIDUAL_TOL, maxiter=2000)
        res = np.linalg.norm(aff @ uf - rhs)
        if info != 0 or res / scale > 100 * _RESIDUAL_TOL:
            raise SolverBreakdown(
                f"direct and iterative solves stalled at rel residual {res / scale:.2e}")
    u[assembly.free_idx] = uf
    norms = weighted_norms(u, mesh, assembly.weight, groups=assembly.groups)
    data_scale = float(np.linalg.norm(b) + np.linalg.norm(gd))
    report = {
        "h1w": norms.h1,
        "data_norm": data_scale,
        "apriori_quotient": norms.h1 / data_scale if data_scale > 0 else 0.0,
        "rel_residual": float(res / scale),
    }
    return Solution(u=u, residual=float(res / scale), assembly=assembly,
                    bulk_rhs=b_bulk, report=report)


def poisson(assembly: SystemAssembly, f, guard: bool = True) -> Solution:
    """Solution map for Dirichlet data on Sigma2 with homogeneous Robin data."""
    return solve_mixed(assembly, MixedData(f2=f), guard=guard)


def weighted_normal_derivative(solution: Solution):
    """Boundary functional of the weighted co-normal derivative (outward).

    Returns (values, boundary vertex ids): values[i] pairs the flux against
    the trace hat at id i, computed through the bilinear-form duality with
    the bulk load subtracted and the Robin q-term removed."""
    asm = solution.assembly
    ids = np.array(sorted(asm.mesh.vertex_tag_sets().keys()), dtype=np.int64)
    resid = asm.matrix @ solution.u
    if solution.bulk_rhs is not None:
        resid = resid - solution.bulk_rhs
    resid = resid - asm.boundary_q @ solution.u
    return resid[ids], ids
