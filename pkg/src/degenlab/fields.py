"""Analytic coefficient fields: potentials, windows and test bumps.

All fields carry exact first and second derivatives so that operators can be
applied to them symbolically (no differencing).  Points are passed as arrays
of shape (npts, dim); values come back as (npts,) and gradients as
(npts, dim).
"""

from __future__ import annotations

import numpy as np


class AnalyticField:
    """Scalar field defined by closed-form value / gradient / Laplacian."""

    def __init__(self, fn, grad_fn=None, lap_fn=None, dim=None, params=None):
        self._fn = fn
        self._grad = grad_fn
        self._lap = lap_fn
        self.dim = dim
        self.params = params or {}

    def __call__(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return self._fn(pts)

    def grad(self, pts):
        if self._grad is None:
            raise NotImplementedError("field has no gradient rule")
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return self._grad(pts)

    def laplacian(self, pts):
        if self._lap is None:
            raise NotImplementedError("field has no laplacian rule")
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return self._lap(pts)

    def __add__(self, other):
        if np.isscalar(other):
            other = constant(other)
        f, g = self, other
        return AnalyticField(
            lambda p: f(p) + g(p),
            lambda p: f.grad(p) + g.grad(p),
            lambda p: f.laplacian(p) + g.laplacian(p),
            dim=self.dim,
        )

    def __mul__(self, c):
        if not np.isscalar(c):
            raise TypeError("only scalar multiples are supported")
        f = self
        return AnalyticField(
            lambda p: c * f(p),
            lambda p: c * f.grad(p),
            lambda p: c * f.laplacian(p),
            dim=self.dim,
        )

    __rmul__ = __mul__


def constant(value: float, dim=None) -> AnalyticField:
    v = float(value)
    return AnalyticField(
        lambda p: np.full(p.shape[0], v),
        lambda p: np.zeros_like(p),
        lambda p: np.zeros(p.shape[0]),
        dim=dim,
        params={"family": "constant", "value": v},
    )


def gaussian_bump(amplitude: float, center, width: float) -> AnalyticField:
    a = float(amplitude)
    c = np.asarray(center, dtype=float)
    s2 = float(width) ** 2

    def fn(p):
        r2 = np.sum((p - c) ** 2, axis=1)
        return a * np.exp(-0.5 * r2 / s2)

    def grad_fn(p):
        return fn(p)[:, None] * (-(p - c) / s2)

    def lap_fn(p):
        r2 = np.sum((p - c) ** 2, axis=1)
        return fn(p) * (r2 / s2**2 - p.shape[1] / s2)

    return AnalyticField(
        fn, grad_fn, lap_fn, dim=len(c),
        params={"family": "gaussian-bump", "amplitude": a,
                "center": c.tolist(), "width": float(width)},
    )


def cosine_mode(amplitude: float, freq) -> AnalyticField:
    a = float(amplitude)
    f = np.asarray(freq, dtype=float)
    w = 2.0 * np.pi * f

    def fn(p):
        return a * np.cos(p @ w)

    def grad_fn(p):
        return (-a * np.sin(p @ w))[:, None] * w[None, :]

    def lap_fn(p):
        return -a * np.cos(p @ w) * np.sum(w**2)

    return AnalyticField(
        fn, grad_fn, lap_fn, dim=len(f),
        params={"family": "cosine-mode", "amplitude": a, "freq": f.tolist()},
    )


def random_smooth(seed: int, amplitude: float, dim: int, n_modes: int = 4,
                  max_freq: int = 2) -> AnalyticField:
    """Seeded superposition of low cosine modes; deterministic per (seed, dim)."""
    rng = np.random.default_rng(seed)
    coeffs = amplitude * rng.normal(size=n_modes) / np.sqrt(n_modes)
    freqs = rng.integers(0, max_freq + 1, size=(n_modes, dim)).astype(float)
    phases = rng.uniform(0, 2 * np.pi, size=n_modes)
    w = 2.0 * np.pi * freqs  # (n_modes, dim)

    def fn(p):
        ph = p @ w.T + phases
        return np.cos(ph) @ coeffs

    def grad_fn(p):
        ph = p @ w.T + phases
        return -(np.sin(ph) * coeffs) @ w

    def lap_fn(p):
        ph = p @ w.T + phases
        return -np.cos(ph) @ (coeffs * np.sum(w**2, axis=1))

    return AnalyticField(
        fn, grad_fn, lap_fn, dim=dim,
        params={"family": "random-smooth", "seed": int(seed),
                "amplitude": float(amplitude), "n_modes": n_modes,
                "max_freq": max_freq},
    )


_FAMILIES = {
    "constant": lambda spec, dim: constant(spec["value"], dim=dim),
    "gaussian-bump": lambda spec, dim: gaussian_bump(
        spec["amplitude"], spec["center"], spec["width"]),
    "cosine-mode": lambda spec, dim: cosine_mode(spec["amplitude"], spec["freq"]),
    "random-smooth": lambda spec, dim: random_smooth(
        spec["seed"], spec["amplitude"], dim,
        spec.get("n_modes", 4), spec.get("max_freq", 2)),
}


def field_from_spec(spec: dict, dim: int) -> AnalyticField:
    """Build a field from {'family': ..., params...} (CLI/potential configs)."""
    fam = spec.get("family")
    if fam not in _FAMILIES:
        raise ValueError(f"unknown field family {fam!r}")
    return _FAMILIES[fam](spec, dim)


# ---------------------------------------------------------------------------
# 1D profiles with exact derivatives, and their tensor products.  Used for
# the Carleman test fields (second-order vanishing at the lateral walls,
# vertically constant in a slab above the bottom face) and for trace-sweep
# samples.
# ---------------------------------------------------------------------------

def _smoothstep(u):
    """Quintic step: 0 -> 1 on [0,1] with zero first/second derivatives at ends."""
    v = u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
    d1 = 30.0 * u * u * (1.0 - u) ** 2
    d2 = 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u)
    return v, d1, d2


class Profile1D:
    """1D profile evaluated as (value, d/dt, d2/dt2) arrays."""

    def __init__(self, ev, params=None):
        self._ev = ev
        self.params = params or {}

    def ev(self, t):
        t = np.asarray(t, dtype=float)
        return self._ev(t)


def window_profile(t0: float, t1: float, t2: float, t3: float) -> Profile1D:
    """C^2 window: 0 below t0, rises to 1 on [t0,t1], falls to 0 on [t2,t3]."""
    if not (t0 < t1 <= t2 < t3):
        raise ValueError("window knots must satisfy t0 < t1 <= t2 < t3")

    def ev(t):
        v = np.zeros_like(t)
        d1 = np.zeros_like(t)
        d2 = np.zeros_like(t)
        up = (t > t0) & (t < t1)
        u = (t[up] - t0) / (t1 - t0)
        sv, s1, s2 = _smoothstep(u)
        v[up], d1[up], d2[up] = sv, s1 / (t1 - t0), s2 / (t1 - t0) ** 2
        mid = (t >= t1) & (t <= t2)
        v[mid] = 1.0
        dn = (t > t2) & (t < t3)
        u = (t[dn] - t2) / (t3 - t2)
        sv, s1, s2 = _smoothstep(u)
        v[dn], d1[dn], d2[dn] = 1.0 - sv, -s1 / (t3 - t2), -s2 / (t3 - t2) ** 2
        return v, d1, d2

    return Profile1D(ev, {"kind": "window", "knots": (t0, t1, t2, t3)})


def flat_top_profile(t_flat: float, t_zero: float) -> Profile1D:
    """Constant 1 on [0, t_flat], C^2 descent to 0 at t_zero, zero beyond."""
    if not (0 < t_flat < t_zero):
        raise ValueError("need 0 < t_flat < t_zero")

    def ev(t):
        v = np.zeros_like(t)
        d1 = np.zeros_like(t)
        d2 = np.zeros_like(t)
        lo = t <= t_flat
        v[lo] = 1.0
        dn = (t > t_flat) & (t < t_zero)
        u = (t[dn] - t_flat) / (t_zero - t_flat)
        sv, s1, s2 = _smoothstep(u)
        v[dn] = 1.0 - sv
        d1[dn] = -s1 / (t_zero - t_flat)
        d2[dn] = -s2 / (t_zero - t_flat) ** 2
        return v, d1, d2

    return Profile1D(ev, {"kind": "flat-top", "knots": (t_flat, t_zero)})


def trig_profile(coeffs, freqs, phases) -> Profile1D:
    coeffs = np.asarray(coeffs, dtype=float)
    w = np.asarray(freqs, dtype=float)
    ph = np.asarray(phases, dtype=float)

    def ev(t):
        arg = np.multiply.outer(t, w) + ph
        v = np.cos(arg) @ coeffs
        d1 = -np.sin(arg) @ (coeffs * w)
        d2 = -np.cos(arg) @ (coeffs * w**2)
        return v, d1, d2

    return Profile1D(ev)


def tensor_field(profiles) -> AnalyticField:
    """Product of per-axis 1D profiles as a full AnalyticField."""
    profiles = list(profiles)
    dim = len(profiles)

    def parts(p):
        return [pr.ev(p[:, i]) for i, pr in enumerate(profiles)]

    def fn(p):
        v = np.ones(p.shape[0])
        for pv, _, _ in parts(p):
            v = v * pv
        return v

    def grad_fn(p):
        pp = parts(p)
        vals = [x[0] for x in pp]
        g = np.empty((p.shape[0], dim))
        for i in range(dim):
            acc = pp[i][1].copy()
            for j in range(dim):
                if j != i:
                    acc = acc * vals[j]
            g[:, i] = acc
        return g

    def lap_fn(p):
        pp = parts(p)
        vals = [x[0] for x in pp]
        out = np.zeros(p.shape[0])
        for i in range(dim):
            acc = pp[i][2].copy()
            for j in range(dim):
                if j != i:
                    acc = acc * vals[j]
            out += acc
        return out

    return AnalyticField(fn, grad_fn, lap_fn, dim=dim)
