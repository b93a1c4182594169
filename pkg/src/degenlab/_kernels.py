"""Hot assembly kernels: numba-jitted with a pure-numpy fallback.

The fallback is selected by the environment flag DEGENLAB_FORCE_NUMPY=1 (or
automatically when numba is unavailable).  Both paths produce the same local
element matrices up to floating-point summation order; the test suite pins
their agreement to 1e-12 relative and `benchmarks/bench_assembly.py` compares
their throughput.
"""

from __future__ import annotations

import os

import numpy as np

_FORCE_NUMPY = os.environ.get("DEGENLAB_FORCE_NUMPY", "").strip() in ("1", "true", "yes")

try:  # pragma: no cover - exercised via backend_name()
    if _FORCE_NUMPY:
        raise ImportError("numpy backend forced")
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


def backend_name() -> str:
    return "numba" if _HAVE_NUMBA else "numpy"


def _local_matrices_numpy(qw, phi, dphi, kc, mc, d1, d2):
    """Local element matrices for a group of congruent cells.

    qw:   (nc, nq)        quadrature weights incl. the degenerate measure
    phi:  (nq, nl)        basis values at the reference points
    dphi: (nq, nl, dim)   basis gradients in global coordinates
    kc:   (nc, nq)        stiffness coefficient (grad-grad block)
    mc:   (nc, nq)        mass coefficient     (value-value block)
    d1:   (nc, nq, dim)   test-value x trial-gradient coefficient
    d2:   (nc, nq, dim)   test-gradient x trial-value coefficient
    returns loc (nc, nl, nl), loc[c, i, j] = entry (test i, trial j)
    """
    wk = qw * kc
    loc = np.einsum("cq,qia,qja->cij", wk, dphi, dphi, optimize=True)
    wm = qw * mc
    loc += np.einsum("cq,qi,qj->cij", wm, phi, phi, optimize=True)
    if d1 is not None:
        loc += np.einsum("cqa,cq,qi,qja->cij", d1, qw, phi, dphi, optimize=True)
    if d2 is not None:
        loc += np.einsum("cqa,cq,qia,qj->cij", d2, qw, dphi, phi, optimize=True)
    return loc


if _HAVE_NUMBA:

    @njit(cache=True)
    def _local_matrices_numba(qw, phi, dphi, kc, mc, d1, d2, use_d1, use_d2):  # pragma: no cover - jitted
        nc, nq = qw.shape
        nl = phi.shape[1]
        dim = dphi.shape[2]
        loc = np.zeros((nc, nl, nl), dtype=np.complex128)
        for c in range(nc):
            for q in range(nq):
                w = qw[c, q]
                wk = w * kc[c, q]
                wm = w * mc[c, q]
                for i in range(nl):
                    for j in range(nl):
                        acc = wm * phi[q, i] * phi[q, j]
                        g = 0.0
                        for a in range(dim):
                            g += dphi[q, i, a] * dphi[q, j, a]
                        acc = acc + wk * g
                        if use_d1:
                            s1 = 0.0j
                            for a in range(dim):
                                s1 += d1[c, q, a] * dphi[q, j, a]
                            acc = acc + w * phi[q, i] * s1
                        if use_d2:
                            s2 = 0.0j
                            for a in range(dim):
                                s2 += d2[c, q, a] * dphi[q, i, a]
                            acc = acc + w * s2 * phi[q, j]
                        loc[c, i, j] += acc
        return loc


def local_matrices(qw, phi, dphi, kc, mc, d1=None, d2=None):
    """Dispatch to the active backend; see _local_matrices_numpy for shapes."""
    qw = np.ascontiguousarray(qw, dtype=np.float64)
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    dphi = np.ascontiguousarray(dphi, dtype=np.float64)
    nc, nq = qw.shape
    dim = dphi.shape[2]
    kc = np.ascontiguousarray(np.broadcast_to(kc, (nc, nq)), dtype=np.complex128)
    mc = np.ascontiguousarray(np.broadcast_to(mc, (nc, nq)), dtype=np.complex128)
    if not _HAVE_NUMBA:
        return _local_matrices_numpy(qw, phi, dphi, kc, mc, d1, d2)
    empty = np.zeros((nc, nq, dim), dtype=np.complex128)
    d1c = empty if d1 is None else np.ascontiguousarray(
        np.broadcast_to(d1, (nc, nq, dim)), dtype=np.complex128)
    d2c = empty if d2 is None else np.ascontiguousarray(
        np.broadcast_to(d2, (nc, nq, dim)), dtype=np.complex128)
    return _local_matrices_numba(qw, phi, dphi, kc, mc, d1c, d2c,
                                 d1 is not None, d2 is not None)


def local_matrices_numpy(qw, phi, dphi, kc, mc, d1=None, d2=None):
    """Always-numpy path (used by the backend-agreement test and benchmark)."""
    qw = np.asarray(qw, dtype=np.float64)
    nc, nq = qw.shape
    kc = np.broadcast_to(np.asarray(kc, dtype=np.complex128), (nc, nq))
    mc = np.broadcast_to(np.asarray(mc, dtype=np.complex128), (nc, nq))
    dim = dphi.shape[2]
    if d1 is not None:
        d1 = np.broadcast_to(np.asarray(d1, dtype=np.complex128), (nc, nq, dim))
    if d2 is not None:
        d2 = np.broadcast_to(np.asarray(d2, dtype=np.complex128), (nc, nq, dim))
    return _local_matrices_numpy(qw, np.asarray(phi, float), np.asarray(dphi, float), kc, mc, d1, d2)
