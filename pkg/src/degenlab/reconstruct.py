"""Frequency-domain recovery of bulk and boundary potentials.

Phase-only sampling evaluates the limiting pairing (remainders dropped) by
separable quadrature: the bulk density against exp(i k'.x' + i k_d x_d^(2s))
under the degenerate weight, plus the k_d-independent boundary transform.
The bulk part is inverted on the substituted vertical variable y = x^(2s),
where the pairing is an ordinary Fourier transform of the density
V(y^(1/2s)) y^(1/s-2) / (2s); the boundary part is estimated first from the
high-|k_d| band, where the bulk transform has decayed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import Potentials, WeightSpec, boundary_quadrature, evaluate_fe
from .cgo import CGOParams, cgo_solution_nodal, construct_xi, solve_remainder
from .errors import BandTooNarrow, GridTooCoarse
from .mesh import TAG_SIGMA1, Mesh
from .quadrature import gauss_legendre_rule, weighted_gauss_rule


# ---------------------------------------------------------------------------
# frequency grids and bandwidth
# ---------------------------------------------------------------------------

def declared_bandwidth(fieldobj, default: float = 8.0) -> float:
    """Frequency content estimate from a field's family parameters."""
    params = getattr(fieldobj, "params", None) or {}
    fam = params.get("family")
    if fam == "gaussian-bump":
        return 3.4 / float(params["width"])
    if fam == "cosine-mode":
        return 2.0 * np.pi * float(np.linalg.norm(params["freq"])) + 2.0
    if fam == "random-smooth":
        return 2.0 * np.pi * float(params.get("max_freq", 2)) + 2.0
    if fam == "constant":
        return default
    return default


def frequency_grid(bandwidth: float, n: int = 33, factor: float = 1.5):
    """Symmetric uniform axis, odd point count (so k = 0 is sampled)."""
    if n % 2 == 0:
        n += 1
    kmax = factor * bandwidth
    return np.linspace(-kmax, kmax, n)


@dataclass
class FrequencySamples:
    k_axes: list                  # per-axis frequency arrays (length dim)
    values: np.ndarray            # complex, shape (len(k_1), ..., len(k_d))
    mode: str
    s: float
    mesh_descriptor: dict
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.k_axes)

    def hermitian_defect(self) -> float:
        flipped = self.values[tuple(slice(None, None, -1) for _ in range(self.dim))]
        num = np.max(np.abs(flipped - np.conj(self.values)))
        den = max(np.max(np.abs(self.values)), 1e-300)
        return float(num / den)

    def to_csv(self, path: str) -> None:
        grids = np.meshgrid(*self.k_axes, indexing="ij")
        with open(path, "w") as fh:
            fh.write(",".join(f"k{a}" for a in range(self.dim)) + ",re,im\n")
            flatk = [g.ravel() for g in grids]
            flatv = self.values.ravel()
            for i in range(flatv.size):
                row = [f"{flatk[a][i]:.10e}" for a in range(self.dim)]
                fh.write(",".join(row) + f",{flatv[i].real:.12e},{flatv[i].imag:.12e}\n")


# ---------------------------------------------------------------------------
# quadrature grids for the pairing
# ---------------------------------------------------------------------------

def _axis_rules(mesh: Mesh, s: float, n_horiz: int = 6, n_vert: int = 8):
    """Per-axis composite nodes/weights; the vertical weights absorb the
    degenerate factor and pair with the substituted phase coordinate."""
    nodes, weights, phase_coord = [], [], []
    for a in range(mesh.dim):
        ax = mesh.axes[a]
        xs, ws = [], []
        vertical = a == mesh.dim - 1
        for i in range(len(ax) - 1):
            if vertical:
                x, w = weighted_gauss_rule((ax[i], ax[i + 1]), 1.0 - 2.0 * s, n_vert)
            else:
                x, w = gauss_legendre_rule((ax[i], ax[i + 1]), n_horiz)
            xs.append(x)
            ws.append(w)
        xx = np.concatenate(xs)
        nodes.append(xx)
        weights.append(np.concatenate(ws))
        phase_coord.append(xx ** (2.0 * s) if vertical else xx)
    return nodes, weights, phase_coord


def _separable_transform(wtensor: np.ndarray, coords: list, k_axes: list,
                         sign: float = 1.0) -> np.ndarray:
    """Contract a dense weight tensor against exp(i*sign*k.x) axis by axis."""
    out = wtensor.astype(np.complex128)
    for a in range(len(coords)):
        emat = np.exp(1j * sign * np.outer(k_axes[a], coords[a]))
        out = np.tensordot(emat, out, axes=([1], [a]))
        out = np.moveaxis(out, 0, a)
    return out


def _difference(f1, f2, pts, horizontal=False):
    a = np.asarray(f1(pts)) if f1 is not None else 0.0
    b = np.asarray(f2(pts)) if f2 is not None else 0.0
    return a - b


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def sample_pairing(mesh: Mesh, s: float, pots1: Potentials, pots2: Potentials,
                   k_axes: list, mode: str = "phase-only", tau: float = 8.0,
                   n_horiz: int = 6, n_vert: int = 8) -> FrequencySamples:
    """T(k) samples of the potential-difference pairing over a tensor grid.

    'phase-only' evaluates the remainder-free limit by quadrature;
    'exact-cgo' drives full remainder solves per frequency (small grids)."""
    if mode == "exact-cgo":
        grids = np.meshgrid(*k_axes, indexing="ij")
        flat = np.stack([g.ravel() for g in grids], axis=1)
        vals = np.array([exact_cgo_pairing(mesh, s, pots1, pots2, kvec, tau)
                         for kvec in flat])
        values = vals.reshape(grids[0].shape)
        return FrequencySamples(k_axes=[np.asarray(k) for k in k_axes],
                                values=values, mode=mode, s=s,
                                mesh_descriptor=mesh.descriptor(),
                                meta={"tau": tau})
    if mode != "phase-only":
        raise ValueError(f"unknown mode {mode!r}")
    nodes, weights, coords = _axis_rules(mesh, s, n_horiz, n_vert)
    grids = np.meshgrid(*nodes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    dv = _difference(pots1.V, pots2.V, pts)
    wt = np.ones(pts.shape[0])
    shape = tuple(len(x) for x in nodes)
    for a in range(mesh.dim):
        resh = [1] * mesh.dim
        resh[a] = shape[a]
        wt = wt * np.broadcast_to(weights[a].reshape(resh), shape).ravel()
    bulk_tensor = (wt * dv).reshape(shape)
    values = _separable_transform(bulk_tensor, coords, k_axes)
    # boundary part: independent of the vertical frequency
    if pots1.q is not None or pots2.q is not None:
        hnodes, hweights = nodes[:-1], weights[:-1]
        hg = np.meshgrid(*hnodes, indexing="ij")
        hpts = np.stack([g.ravel() for g in hg], axis=1)
        dq = _difference(pots1.q, pots2.q, hpts)
        hshape = tuple(len(x) for x in hnodes)
        hwt = np.ones(hpts.shape[0])
        for a in range(mesh.dim - 1):
            resh = [1] * (mesh.dim - 1)
            resh[a] = hshape[a]
            hwt = hwt * np.broadcast_to(hweights[a].reshape(resh), hshape).ravel()
        qhat = _separable_transform((hwt * dq).reshape(hshape),
                                    nodes[:-1], k_axes[:-1])
        values = values + qhat[..., None]
    return FrequencySamples(k_axes=[np.asarray(k) for k in k_axes], values=values,
                            mode="phase-only", s=s,
                            mesh_descriptor=mesh.descriptor())


def exact_cgo_pairing(mesh: Mesh, s: float, pots1: Potentials, pots2: Potentials,
                      k, tau: float, margin: int = 2) -> complex:
    """One T(k) sample through full solves: oscillatory pair traces on Sigma2,
    then the pairing of the map difference via the bilinear-form duality."""
    from .forward import poisson

    k = np.asarray(k, dtype=float)
    base = construct_xi(k if np.linalg.norm(k) > 0 else np.zeros(mesh.dim),
                        tau, s, mesh.dim)
    z1 = np.real(base.xi) / max(tau, 1e-300)
    z2 = np.imag(base.xi) / max(tau, 1e-300)
    p1 = CGOParams(s=s, k=0.5 * k, xi=tau * (z1 + 1j * z2), tau=tau)
    p2 = CGOParams(s=s, k=-0.5 * k, xi=tau * (-z1 + 1j * z2), tau=tau)
    rem1 = solve_remainder(p1, pots1.V, pots1.q, mesh, margin=margin)
    rem2 = solve_remainder(p2, pots2.V, pots2.q, mesh, margin=margin)
    u1 = cgo_solution_nodal(rem1)
    u2 = cgo_solution_nodal(rem2)
    asm1, asm2 = rem1.assembly, rem2.assembly
    sol1 = poisson(asm1, u1, guard=False)
    sol2 = poisson(asm2, u2, guard=False)
    g1 = u1[asm1.dir_idx].copy()
    g2 = u2[asm2.dir_idx].copy()
    g1[~asm1.sigma2_dir_mask] = 0.0
    g2[~asm2.sigma2_dir_mask] = 0.0
    flux1 = (asm1.matrix @ sol1.u)[asm1.dir_idx]
    flux2 = (asm2.matrix @ sol2.u)[asm2.dir_idx]
    return complex(np.conj(g2) @ flux1 - np.conj(np.conj(g1) @ flux2))


def phase_only_pairing(mesh: Mesh, s: float, pots1: Potentials, pots2: Potentials,
                       k) -> complex:
    """Single remainder-free T(k) value (the large-frequency limit)."""
    fs = sample_pairing(mesh, s, pots1, pots2,
                        [np.array([ki]) for ki in np.asarray(k, float)])
    return complex(fs.values.ravel()[0])


# ---------------------------------------------------------------------------
# inversion
# ---------------------------------------------------------------------------

@dataclass
class Reconstruction:
    v_axes: list
    v_field: np.ndarray | None
    q_axes: list | None
    q_field: np.ndarray | None
    imag_residue: float
    meta: dict = field(default_factory=dict)

    def v_error(self, truth, weights=None) -> float:
        grids = np.meshgrid(*self.v_axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        ref = np.asarray(truth(pts)).reshape(self.v_field.shape)
        w = np.ones_like(ref) if weights is None else weights
        num = np.sqrt(np.sum(w * (self.v_field - ref) ** 2))
        den = max(np.sqrt(np.sum(w * ref**2)), 1e-300)
        return float(num / den)

    def q_error(self, truth) -> float:
        grids = np.meshgrid(*self.q_axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        ref = np.asarray(truth(pts)).reshape(self.q_field.shape)
        num = np.linalg.norm(self.q_field - ref)
        den = max(np.linalg.norm(ref), 1e-300)
        return float(num / den)


def _check_nyquist(samples: FrequencySamples, lengths) -> None:
    for a, k in enumerate(samples.k_axes):
        if len(k) < 2:
            raise GridTooCoarse(f"axis {a}: need at least two frequencies")
        dk = k[1] - k[0]
        # periodization window of the Riemann sum must cover the support
        if 2.0 * np.pi / dk < 1.5 * lengths[min(a, len(lengths) - 1)]:
            raise GridTooCoarse(
                f"axis {a}: frequency spacing {dk:.3g} aliases the domain")


def _inverse_on_axes(samples_values, k_axes, target_axes) -> np.ndarray:
    out = samples_values.astype(np.complex128)
    scale = 1.0
    for a, k in enumerate(k_axes):
        dk = k[1] - k[0]
        scale *= dk / (2.0 * np.pi)
        emat = np.exp(-1j * np.outer(target_axes[a], k))
        out = np.tensordot(emat, out, axes=([1], [a]))
        out = np.moveaxis(out, 0, a)
    return scale * out


def recover_v_fixed_q(samples: FrequencySamples, mesh: Mesh) -> Reconstruction:
    """Half-order case: the pairing is a plain Fourier transform of the bulk
    density; invert by the zero-padded Riemann sum on the vertex grid."""
    if abs(samples.s - 0.5) > 1e-12:
        raise ValueError("fixed-q recovery is the s = 1/2 mode")
    _check_nyquist(samples, mesh.lengths)
    target_axes = [np.asarray(a) for a in mesh.axes]
    vals = _inverse_on_axes(samples.values, samples.k_axes, target_axes)
    residue = float(np.max(np.abs(vals.imag)) / max(np.max(np.abs(vals)), 1e-300))
    return Reconstruction(v_axes=target_axes, v_field=vals.real,
                          q_axes=None, q_field=None, imag_residue=residue,
                          meta={"mode": samples.mode})


def recover_v_and_q(samples: FrequencySamples, mesh: Mesh,
                    band_fraction: float = 0.25,
                    leakage_threshold: float = 1.0) -> Reconstruction:
    """General-order joint recovery.

    The boundary transform is independent of the vertical frequency while the
    bulk transform decays in it, so the top band of |k_d| estimates q-hat;
    the de-biased remainder is inverted on the substituted vertical variable
    and mapped back through y = x^(2s)."""
    s = samples.s
    if not (s > 0.5):
        raise ValueError("joint recovery needs s > 1/2")
    _check_nyquist(samples, mesh.lengths)
    kd = samples.k_axes[-1]
    nbig = max(2, int(np.ceil(band_fraction * len(kd))))
    order = np.argsort(np.abs(kd))
    band = order[-nbig:]
    band_vals = samples.values[..., band]
    qhat = np.mean(band_vals, axis=-1)
    spread = np.mean(np.abs(band_vals - qhat[..., None]), axis=-1)
    leakage = float(np.max(spread) / max(np.max(np.abs(samples.values)), 1e-300))
    if leakage > leakage_threshold:
        raise BandTooNarrow(
            f"bulk leakage {leakage:.3g} in the q band exceeds {leakage_threshold}")
    q_axes = [np.asarray(a) for a in mesh.axes[:-1]]
    qv = _inverse_on_axes(qhat, samples.k_axes[:-1], q_axes)
    bulk = samples.values - qhat[..., None]
    # invert on (x', y) with y the substituted vertical coordinate
    y_axes = [np.asarray(a) for a in mesh.axes[:-1]]
    y_axes.append(np.asarray(mesh.axes[-1]) ** (2.0 * s))
    dens = _inverse_on_axes(bulk, samples.k_axes, y_axes)
    yv = y_axes[-1]
    jac = np.zeros_like(yv)
    pos = yv > 0
    jac[pos] = 2.0 * s * yv[pos] ** (2.0 - 1.0 / s)
    vvals = dens * jac.reshape((1,) * (samples.dim - 1) + (-1,))
    residue = max(
        float(np.max(np.abs(vvals.imag)) / max(np.max(np.abs(vvals)), 1e-300)),
        float(np.max(np.abs(qv.imag)) / max(np.max(np.abs(qv)), 1e-300)))
    return Reconstruction(v_axes=[np.asarray(a) for a in mesh.axes],
                          v_field=vvals.real, q_axes=q_axes, q_field=qv.real,
                          imag_residue=residue,
                          meta={"mode": samples.mode, "leakage": leakage,
                                "band_size": nbig})


def resynthesize(recon: Reconstruction, mesh: Mesh, s: float,
                 k_axes: list) -> FrequencySamples:
    """Forward map of a reconstruction: phase-only samples of the recovered
    fields (bulk nodal interpolant; boundary grid values)."""
    vfun = lambda p: evaluate_fe(recon.v_field.ravel(), mesh, p).real
    pots1 = Potentials(V=_CallableField(vfun))
    if recon.q_field is not None:
        qgrid = recon.q_field

        def qfun(pp):
            sub = Mesh(axes=[np.asarray(a) for a in recon.q_axes], grading=None)
            return evaluate_fe(qgrid.ravel(), sub, pp).real
        pots1.q = _CallableField(qfun)
    return sample_pairing(mesh, s, pots1, Potentials(), k_axes)


class _CallableField:
    def __init__(self, fn):
        self._fn = fn
        self.params = {"family": "opaque"}

    def __call__(self, pts):
        return self._fn(np.atleast_2d(pts))
