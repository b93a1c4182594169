"""Complex-frequency probing: remainder solves, decay sweeps, Carleman and
trace-inequality ratios.

The remainder of the oscillatory ansatz exp(xi.x') (exp(i k'.x' + i k_d
x_d^(2s)) + r) is constructed as the minimum-norm field (in the semiclassical
weighted norm) satisfying the conjugated weak equations tested against fields
that vanish, together with their first layer, near Sigma2.  This mirrors the
dual existence argument: the boundedness of that dual functional is exactly
what the Carleman inequality provides, and the construction inherits the
decay rates in the frequency magnitude.  A plain zero-flux alternative is
kept for oracle comparisons; it is degenerate for flux-free amplitudes (the
solve returns minus the amplitude) and is not used in sweeps.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (Potentials, SystemAssembly, WeightSpec, assemble,
                       boundary_load, boundary_quadrature, bulk_load,
                       build_cell_groups, drift_matrix, weighted_norms)
from .errors import (CutoffViolation, DimensionTooSmall, SolverBreakdown,
                     NearSingular, UnresolvedOscillation)
from .fields import AnalyticField
from .mesh import TAG_REST, TAG_SIGMA1, TAG_SIGMA2, Mesh

CELLS_PER_WAVELENGTH = 8


# ---------------------------------------------------------------------------
# frequency data
# ---------------------------------------------------------------------------

@dataclass
class CGOParams:
    """Complex horizontal frequency xi (null vector) orthogonal to the real
    frequency k; tau is the magnitude of the real/imaginary parts."""

    s: float
    k: np.ndarray
    xi: np.ndarray
    tau: float

    @property
    def dim(self) -> int:
        return len(self.k)

    def invariant_defects(self) -> dict:
        xi, k = self.xi, self.k
        scale = max(self.tau**2, 1.0)
        re, im = np.real(xi), np.imag(xi)
        return {
            "xi_null": abs(np.sum(xi * xi)) / scale,
            "xi_perp_k": abs(np.sum(xi * k)) / max(self.tau * max(np.linalg.norm(k), 1.0), 1.0),
            "re_im_equal": abs(np.linalg.norm(re) - np.linalg.norm(im)) / max(self.tau, 1.0),
            "re_im_orth": abs(re @ im) / scale,
            "vertical": 0.0 if abs(self.s - 0.5) < 1e-14 else abs(xi[-1]) / max(self.tau, 1.0),
        }

    def validate(self, tol: float = 1e-14) -> None:
        for name, v in self.invariant_defects().items():
            if v > tol:
                raise ValueError(f"frequency invariant {name} violated: {v:.2e}")


def construct_xi(k, tau: float, s: float, dim: int) -> CGOParams:
    """Deterministic orthonormal pair spanning the admissible plane.

    For s > 1/2 the pair must be horizontal and orthogonal to k (in 3D this
    forces a vertical k); at s = 1/2 the pair may use the vertical direction.
    """
    k = np.asarray(k, dtype=float)
    if len(k) != dim:
        raise ValueError("k must have length dim")
    constraints = [k]
    if s > 0.5:
        e_d = np.zeros(dim)
        e_d[-1] = 1.0
        constraints.append(e_d)
    cmat = np.array([c for c in constraints if np.linalg.norm(c) > 0])
    if cmat.size == 0:
        null = np.eye(dim)
    else:
        _, sv, vt = np.linalg.svd(cmat, full_matrices=True)
        rank = int(np.sum(sv > 1e-13 * max(sv[0], 1.0)))
        null = vt[rank:]
    if null.shape[0] < 2:
        raise DimensionTooSmall(
            f"admissible plane has dimension {null.shape[0]} < 2 for "
            f"(s={s}, dim={dim}, k={k.tolist()})")
    z1, z2 = null[0], null[1]
    # canonical sign: first nonzero component positive
    for z in (z1, z2):
        nz = np.nonzero(np.abs(z) > 1e-13)[0]
        if len(nz) and z[nz[0]] < 0:
            z *= -1.0
    xi = tau * (z1 + 1j * z2)
    params = CGOParams(s=float(s), k=k, xi=xi, tau=float(tau))
    params.validate(1e-12)
    return params


# ---------------------------------------------------------------------------
# oscillatory amplitude and its source data
# ---------------------------------------------------------------------------

@dataclass
class CgoSource:
    """Amplitude, bulk density (relative to the weighted measure) and Robin
    datum driving the remainder equation; norm report is tau-independent."""

    params: CGOParams
    amplitude: object
    f0: object       # bulk density F0: load is integral of w * F0 * conj(v)
    g: object        # Robin datum on the bottom face
    f_norm: float
    g_norm: float


def cgo_source(params: CGOParams, V, q, mesh: Mesh) -> CgoSource:
    s = params.s
    ts = 2.0 * s
    k = params.k
    kp, kd = k[:-1], float(k[-1])
    if abs(s - 0.5) < 1e-14:
        def amplitude(p):
            return np.exp(1j * (p @ k))
    else:
        def amplitude(p):
            return np.exp(1j * (p[:, :-1] @ kp + kd * p[:, -1] ** ts))

    vfn = (lambda p: np.asarray(V(p))) if V is not None else (lambda p: np.zeros(len(p)))
    qfn = (lambda p: np.asarray(q(p[:, :-1]))) if q is not None else (lambda p: np.zeros(len(p)))

    def f0(p):
        out = (vfn(p) + kp @ kp) * amplitude(p)
        if kd != 0.0:
            out = out + ts**2 * kd**2 * p[:, -1] ** (4.0 * s - 2.0) * amplitude(p)
        return out

    def g(p):
        return (1j * ts * kd - qfn(p)) * np.exp(1j * (p[:, :-1] @ kp))

    weight = WeightSpec(s=s)
    groups = build_cell_groups(mesh, weight, n_horiz=4, n_vert=4)
    fsq = 0.0
    for grp in groups:
        flat = grp.pts.reshape(-1, mesh.dim)
        vals = np.asarray(f0(flat)).reshape(grp.qw.shape)
        fsq += float(np.sum(grp.qw * np.abs(vals) ** 2))
    spts, swts = boundary_quadrature(mesh, mesh.facets_with_tag(TAG_SIGMA1))
    gsq = float(np.sum(swts * np.abs(np.asarray(g(spts))) ** 2))
    return CgoSource(params=params, amplitude=amplitude, f0=f0, g=g,
                     f_norm=np.sqrt(fsq), g_norm=np.sqrt(gsq))


# ---------------------------------------------------------------------------
# remainder solves
# ---------------------------------------------------------------------------

def check_oscillation_resolved(mesh: Mesh, kappa: float) -> None:
    if kappa <= 0:
        return
    wavelength = 2.0 * np.pi / kappa
    for a in range(mesh.dim):
        hmax = float(np.max(np.diff(mesh.axes[a])))
        if hmax > wavelength / CELLS_PER_WAVELENGTH:
            raise UnresolvedOscillation(
                f"axis {a}: max cell {hmax:.3g} exceeds lambda/{CELLS_PER_WAVELENGTH} "
                f"= {wavelength / CELLS_PER_WAVELENGTH:.3g} at frequency {kappa:.3g}")


def test_dof_margin_set(mesh: Mesh, margin: int = 2) -> np.ndarray:
    """Dofs at >= margin vertex layers from every Sigma2/Rest vertex."""
    vshape = mesh.vertex_shape()
    bad = np.zeros(mesh.n_vertices, bool)
    for v, tags in mesh.vertex_tag_sets().items():
        if TAG_SIGMA2 in tags or TAG_REST in tags:
            bad[v] = True
    mask = bad.reshape(vshape)
    for _ in range(margin):
        grown = mask.copy()
        for a in range(mesh.dim):
            fwd = [slice(None)] * mesh.dim
            bck = [slice(None)] * mesh.dim
            fwd[a] = slice(1, None)
            bck[a] = slice(None, -1)
            grown[tuple(bck)] |= mask[tuple(fwd)]
            grown[tuple(fwd)] |= mask[tuple(bck)]
        mask = grown
    return np.nonzero(~mask.ravel())[0]


@dataclass
class RemainderSolution:
    r: np.ndarray
    assembly: SystemAssembly
    source: CgoSource
    residual: float
    bc_mode: str
    report: dict = field(default_factory=dict)


def solve_remainder(params: CGOParams, V, q, mesh: Mesh,
                    bc_mode: str = "minimum-norm", margin: int = 2,
                    n_quad: int = 3, assembly: SystemAssembly | None = None,
                    shift: float = 1e-3) -> RemainderSolution:
    """Remainder of the oscillatory ansatz on the given mesh.

    bc_mode 'minimum-norm' (default): least semiclassical norm subject to the
    conjugated weak equations away from Sigma2.  'natural' / 'shifted-natural'
    impose zero weighted co-normal flux on the remainder itself (square
    system); they are kept for oracle comparisons.
    """
    check_oscillation_resolved(mesh, max(params.tau, float(np.linalg.norm(params.k))))
    weight = WeightSpec(s=params.s)
    if assembly is None:
        assembly = assemble(mesh, weight, Potentials(V=V, q=q), n_quad=n_quad)
    src = cgo_source(params, V, q, mesh)
    nv = mesh.n_vertices
    drift = drift_matrix(assembly.groups, nv, params.xi)
    a_conj = (assembly.matrix - 2.0 * drift).tocsr()
    rhs = -bulk_load(assembly.groups, nv, src.f0) \
        + boundary_load(mesh, mesh.facets_with_tag(TAG_SIGMA1), src.g)
    if np.linalg.norm(rhs) == 0.0:
        return RemainderSolution(r=np.zeros(nv, complex), assembly=assembly,
                                 source=src, residual=0.0, bc_mode=bc_mode,
                                 report={"trivial": True})
    if bc_mode in ("natural", "shifted-natural"):
        a_sys = a_conj if bc_mode == "natural" else (a_conj + shift * assembly.mass_w).tocsr()
        try:
            r = spla.spsolve(a_sys.tocsc(), rhs)
        except RuntimeError as exc:
            raise SolverBreakdown(f"remainder solve failed: {exc}") from exc
        res = np.linalg.norm(a_sys @ r - rhs) / np.linalg.norm(rhs)
        if res > 1e-9:
            warnings.warn(NearSingular(
                f"remainder system near singular: rel residual {res:.2e}"))
        return RemainderSolution(r=r, assembly=assembly, source=src,
                                 residual=float(res), bc_mode=bc_mode)
    if bc_mode != "minimum-norm":
        raise ValueError(f"unknown bc_mode {bc_mode!r}")
    tsel = test_dof_margin_set(mesh, margin)
    bmat = a_conj[tsel]
    d = rhs[tsel]
    tau = max(params.tau, 1.0)
    msc = (assembly.mass_w + tau**-2 * assembly.stiffness
           + tau ** (2.0 * params.s - 2.0) * assembly.sigma1_mass).tocsc()
    kkt = sp.bmat([[msc.astype(np.complex128), bmat.getH()], [bmat, None]],
                  format="csc")
    try:
        sol = spla.splu(kkt).solve(np.concatenate([np.zeros(nv, complex), d]))
    except RuntimeError as exc:
        raise SolverBreakdown(f"saddle solve failed: {exc}") from exc
    r = sol[:nv]
    res = np.linalg.norm(bmat @ r - d) / max(np.linalg.norm(d), 1e-300)
    if res > 1e-9:
        raise SolverBreakdown(f"constraint residual {res:.2e} above 1e-9")
    return RemainderSolution(r=r, assembly=assembly, source=src,
                             residual=float(res), bc_mode=bc_mode,
                             report={"n_constraints": len(tsel)})


def cgo_solution_nodal(rem: RemainderSolution) -> np.ndarray:
    """Nodal values of exp(xi.x')(amplitude + r) on the remainder's mesh."""
    mesh = rem.assembly.mesh
    coords = mesh.vertex_coords()
    expf = np.exp(coords @ rem.source.params.xi)
    return expf * (np.asarray(rem.source.amplitude(coords)) + rem.r)


# ---------------------------------------------------------------------------
# decay sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepReport:
    taus: list
    norms: dict          # name -> list of values per tau
    slopes: dict | None  # name -> fitted log-log slope (upper range)
    targets: dict        # name -> paper exponent
    tolerance: float
    passed: bool | None
    trivial: bool = False
    meta: dict = field(default_factory=dict)

    def rows(self):
        names = list(self.norms)
        for i, t in enumerate(self.taus):
            yield [t] + [self.norms[n][i] for n in names]

    def to_csv(self, path):
        names = list(self.norms)
        with open(path, "w") as fh:
            fh.write(",".join(["tau"] + names) + "\n")
            for row in self.rows():
                fh.write(",".join(f"{v:.12e}" for v in row) + "\n")

    def summary(self) -> dict:
        return {"taus": list(self.taus), "slopes": self.slopes,
                "targets": self.targets, "tolerance": self.tolerance,
                "passed": self.passed, "trivial": self.trivial, **self.meta}


def fit_upper_slope(taus, values) -> float:
    """Least-squares log-log slope over the upper part of the range
    (geometric midpoint and above, at least three points when available)."""
    taus = np.asarray(taus, float)
    values = np.asarray(values, float)
    gm = np.sqrt(taus[0] * taus[-1])
    mask = taus >= gm
    want = min(3, len(taus))
    if np.sum(mask) < want:
        mask = np.zeros_like(mask)
        mask[-want:] = True
    return float(np.polyfit(np.log(taus[mask]), np.log(values[mask]), 1)[0])


def decay_sweep(k, s: float, V, q, tau_list, mesh: Mesh,
                bc_mode: str = "minimum-norm", tolerance: float = 0.15,
                margin: int = 2) -> SweepReport:
    taus = sorted(float(t) for t in tau_list)
    if len(taus) < 3:
        raise ValueError("need at least three tau values")
    if taus[-1] / taus[0] < 10.0 - 1e-9:
        raise ValueError("tau values must span at least one decade")
    check_oscillation_resolved(mesh, max(taus[-1], float(np.linalg.norm(k))))
    targets = {"l2w": -s, "h1w": 1.0 - s, "l2_sigma1": 1.0 - 2.0 * s}
    norms = {n: [] for n in targets}
    assembly = None
    trivial = False
    fnorm = gnorm = None
    for tau in taus:
        params = construct_xi(k, tau, s, mesh.dim)
        rem = solve_remainder(params, V, q, mesh, bc_mode=bc_mode,
                              margin=margin, assembly=assembly)
        assembly = rem.assembly
        fnorm, gnorm = rem.source.f_norm, rem.source.g_norm
        if rem.report.get("trivial"):
            trivial = True
            break
        nr = weighted_norms(rem.r, mesh, assembly.weight, groups=assembly.groups)
        norms["l2w"].append(nr.l2)
        norms["h1w"].append(nr.h1)
        norms["l2_sigma1"].append(nr.l2_sigma1)
    if trivial:
        return SweepReport(taus=taus, norms={n: [] for n in targets}, slopes=None,
                           targets=targets, tolerance=tolerance, passed=None,
                           trivial=True, meta={"f_norm": fnorm, "g_norm": gnorm})
    slopes = {n: fit_upper_slope(taus, v) for n, v in norms.items()}
    passed = all(slopes[n] <= targets[n] + tolerance for n in targets)
    return SweepReport(taus=taus, norms=norms, slopes=slopes, targets=targets,
                       tolerance=tolerance, passed=passed,
                       meta={"f_norm": fnorm, "g_norm": gnorm, "bc_mode": bc_mode})


# ---------------------------------------------------------------------------
# Carleman ratio
# ---------------------------------------------------------------------------

def _weighted_field_quad(mesh, s, fn, extra=None, n=4):
    weight = WeightSpec(s=s)
    groups = build_cell_groups(mesh, weight, n_horiz=n, n_vert=n)
    acc = 0.0
    for g in groups:
        flat = g.pts.reshape(-1, mesh.dim)
        vals = np.abs(np.asarray(fn(flat))) ** 2
        if extra is not None:
            vals = vals * extra(flat)
        acc += float(np.sum(g.qw * vals.reshape(g.qw.shape)))
    return np.sqrt(acc)


def carleman_ratio(u: AnalyticField, params: CGOParams, V, q, mesh: Mesh,
                   n_quad: int = 4, cutoff_tol: float = 1e-10):
    """(LHS, RHS, ratio) of the exponential-weight inequality for one
    admissible test field; the data f, g are computed from u analytically."""
    s = params.s
    tau = params.tau
    zeta1 = np.real(params.xi) / max(tau, 1e-300)
    # admissibility: u and its gradient vanish on the lateral/top boundary
    side_facets = [f for f in range(len(mesh.facet_tag))
                   if not (mesh.facet_axis[f] == mesh.dim - 1 and mesh.facet_side[f] == 0)]
    bpts, _ = boundary_quadrature(mesh, side_facets, n=3)
    uscale = max(np.max(np.abs(np.asarray(u(mesh.vertex_coords())))), 1e-300)
    if np.max(np.abs(np.asarray(u(bpts)))) > cutoff_tol * uscale or \
       np.max(np.abs(np.asarray(u.grad(bpts)))) > cutoff_tol * uscale / min(mesh.lengths):
        raise CutoffViolation("test field does not vanish to second order near Sigma2")
    if abs(s - 0.5) < 1e-14 and q is not None:
        qmax = float(np.max(np.abs(np.asarray(q(bpts[:, :-1])))))
        if qmax > 0.5:
            warnings.warn("s = 1/2 boundedness requires a small boundary "
                          f"potential; sup|q| = {qmax:.3g} may break the estimate")

    def efac(p):
        return np.exp(2.0 * tau * (p[:, :-1] @ zeta1[:-1]) + 2.0 * tau * zeta1[-1] * p[:, -1])

    vfn = (lambda p: np.asarray(V(p))) if V is not None else (lambda p: np.zeros(len(p)))
    qfn = (lambda p: np.asarray(q(p[:, :-1]))) if q is not None else (lambda p: np.zeros(len(p)))

    def f0(p):
        du = np.asarray(u.grad(p))
        return np.asarray(u.laplacian(p)) \
            + (1.0 - 2.0 * s) * np.where(p[:, -1] > 0, du[:, -1] / p[:, -1], 0.0) \
            + vfn(p) * np.asarray(u(p))

    lhs_bulk = _weighted_field_quad(mesh, s, u, extra=efac, n=n_quad)
    lhs_grad = _weighted_field_quad(
        mesh, s, lambda p: np.linalg.norm(np.asarray(u.grad(p)), axis=1),
        extra=efac, n=n_quad)
    spts, swts = boundary_quadrature(mesh, mesh.facets_with_tag(TAG_SIGMA1), n=n_quad)
    eb = np.exp(2.0 * tau * (spts[:, :-1] @ zeta1[:-1]))
    lhs_trace = np.sqrt(float(np.sum(swts * eb * np.abs(np.asarray(u(spts))) ** 2)))
    lhs = tau**s * lhs_trace + tau * lhs_bulk + lhs_grad

    rhs_bulk = _weighted_field_quad(mesh, s, f0, extra=efac, n=n_quad)
    gs = qfn(spts) * np.asarray(u(spts))
    rhs_trace = np.sqrt(float(np.sum(swts * eb * np.abs(gs) ** 2)))
    rhs = rhs_bulk + tau ** (1.0 - s) * rhs_trace
    if lhs == 0.0 and rhs == 0.0:
        return 0.0, 0.0, 0.0
    return lhs, rhs, lhs / max(rhs, 1e-300)


# ---------------------------------------------------------------------------
# trace inequality ratios
# ---------------------------------------------------------------------------

def trace_inequality_ratio(u: AnalyticField, mu: float, s: float, mesh: Mesh,
                           mode: str = "unweighted", mu_floor: float = 1.0,
                           n_quad: int = 4) -> float:
    """Ratio of the boundary norm to the mu-combination of bulk norms."""
    if mu < mu_floor:
        raise ValueError(f"mu must be >= {mu_floor}")
    bpts, bwts = boundary_quadrature(mesh, np.arange(len(mesh.facet_tag)), n=n_quad)
    lhs = np.sqrt(float(np.sum(bwts * np.abs(np.asarray(u(bpts))) ** 2)))
    if mode == "unweighted":
        groups = build_cell_groups(mesh, None, n_horiz=n_quad, n_vert=n_quad)
        l2 = semi = 0.0
        for g in groups:
            flat = g.pts.reshape(-1, mesh.dim)
            l2 += float(np.sum(g.qw * np.abs(np.asarray(u(flat))).reshape(g.qw.shape) ** 2))
            gv = np.asarray(u.grad(flat))
            semi += float(np.sum(g.qw * np.sum(np.abs(gv) ** 2, axis=1).reshape(g.qw.shape)))
        combo = np.sqrt(semi) / mu + mu * np.sqrt(l2)
    elif mode == "weighted":
        weight = WeightSpec(s=s, mode="distance")
        groups = build_cell_groups(mesh, weight, n_horiz=n_quad, n_vert=n_quad)
        l2 = semi = 0.0
        for g in groups:
            flat = g.pts.reshape(-1, mesh.dim)
            l2 += float(np.sum(g.qw * np.abs(np.asarray(u(flat))).reshape(g.qw.shape) ** 2))
            gv = np.asarray(u.grad(flat))
            semi += float(np.sum(g.qw * np.sum(np.abs(gv) ** 2, axis=1).reshape(g.qw.shape)))
        combo = mu ** (-s) * np.sqrt(semi) + mu ** (1.0 - s) * np.sqrt(l2)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return lhs / combo


def empirical_trace_constant(u_fields, mus, s: float, mesh: Mesh,
                             mode: str = "unweighted") -> float:
    return max(trace_inequality_ratio(u, mu, s, mesh, mode=mode)
               for u in u_fields for mu in mus)
