"""Config-driven experiment runner.

Every experiment is a JSON config naming one command; runs are deterministic
given the config (all randomness is seeded), emit CSV/JSON artifacts plus a
manifest listing content digests and per-check pass/fail, and exit 0 iff all
configured checks pass.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .assembly import Potentials, WeightSpec, assemble
from .dtn import (alessandrini_residual, compute_dtn, content_digest,
                  symmetry_defect)
from .errors import ConfigInvalid, DegenlabError
from .fields import field_from_spec, flat_top_profile, tensor_field, trig_profile, window_profile
from .forward import MixedData, nearest_eigenvalue, poisson, solve_mixed
from .io import export_field_csv, save_field
from .mesh import build_graded_box
from .reconstruct import (declared_bandwidth, frequency_grid, recover_v_and_q,
                          recover_v_fixed_q, resynthesize, sample_pairing)
from .runge import build_dictionary, bulk_target, simultaneous_fit
from .cgo import (CGOParams, carleman_ratio, construct_xi, decay_sweep,
                  fit_upper_slope, trace_inequality_ratio)

_TAGGERS = {
    "bottom-sigma1": None,
    "all-sigma2": lambda c: "sigma2",
}


def cache_key(mesh_desc: dict, weight_desc: dict, pots_desc: dict) -> str:
    """Stable content digest; invariant under config field reordering."""
    return content_digest({"mesh": mesh_desc, "weight": weight_desc,
                           "potentials": pots_desc})


def _require(cfg: dict, key: str, ctx: str):
    if key not in cfg:
        raise ConfigInvalid(f"{ctx}: missing field {key!r}")
    return cfg[key]


def _mesh_from(cfg: dict):
    mc = _require(cfg, "mesh", "config")
    tagger_name = mc.get("tagger", "bottom-sigma1")
    if tagger_name not in _TAGGERS:
        raise ConfigInvalid(f"mesh.tagger: unknown value {tagger_name!r}")
    return build_graded_box(
        _require(mc, "lengths", "mesh"), _require(mc, "cells", "mesh"),
        mc.get("grading", 0.7), tagger=_TAGGERS[tagger_name],
        tag_name=tagger_name)


def _weight_from(cfg: dict) -> WeightSpec:
    wc = _require(cfg, "weight", "config")
    return WeightSpec(s=float(_require(wc, "s", "weight")),
                      mode=wc.get("mode", "vertical"), clamp=wc.get("clamp"))


def _potentials_from(cfg: dict, dim: int, key: str = "potentials") -> Potentials:
    pc = cfg.get(key) or {}
    vf = field_from_spec(pc["V"], dim) if pc.get("V") else None
    qf = field_from_spec(pc["q"], dim - 1) if pc.get("q") else None
    af = tuple(field_from_spec(c, dim) for c in pc["A"]) if pc.get("A") else None
    return Potentials(V=vf, q=qf, A=af)


def _boundary_fn(spec, dim):
    if spec == "one" or spec is None:
        return lambda p: np.ones(len(p))
    f = field_from_spec(spec, dim)
    return lambda p: np.asarray(f(p))


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _cmd_forward(cfg, mesh, weight, pots, out, seed):
    asm = assemble(mesh, weight, pots, lam=cfg.get("lambda", 0.0))
    data_cfg = cfg.get("data", {})
    sol = solve_mixed(asm, MixedData(
        f2=_boundary_fn(data_cfg.get("f2", "one"), mesh.dim)))
    export_field_csv(os.path.join(out, "solution.csv"), mesh, sol.u)
    save_field(os.path.join(out, "solution.npz"), mesh, sol.u)
    checks = {}
    tol = cfg.get("checks", {}).get("max_deviation_from_one")
    if tol is not None:
        checks["constant_reproduction"] = bool(np.max(np.abs(sol.u - 1.0)) < tol)
    return {"solution.csv": None, "solution.npz": None}, checks, sol.report


def _cmd_dtn(cfg, mesh, weight, pots, out, seed):
    asm = assemble(mesh, weight, pots, lam=cfg.get("lambda", 0.0))
    use_cache = cfg.get("cache", True)
    dtn = compute_dtn(asm, basis=cfg.get("basis", "hats"), use_cache=use_cache)
    dtn.to_csv(os.path.join(out, "dtn.csv"))
    dtn.save(os.path.join(out, "dtn.npz"))
    mode = cfg.get("checks", {}).get("mode", "transpose")
    defect = symmetry_defect(dtn, mode=mode)
    tol = cfg.get("checks", {}).get("symmetry_tol", 1e-10)
    return ({"dtn.csv": None, "dtn.npz": None},
            {"symmetry": bool(defect < tol)},
            {"symmetry_defect": defect, "mode": mode, "size": dtn.entries.shape[0],
             "digest": dtn.digest})


def _cmd_alessandrini(cfg, mesh, weight, pots, out, seed):
    pots2 = _potentials_from(cfg, mesh.dim, "potentials2")
    bd = cfg.get("boundary_data", {})
    f1 = _boundary_fn(bd.get("f1"), mesh.dim)
    f2 = _boundary_fn(bd.get("f2"), mesh.dim)
    rep = alessandrini_residual(mesh, weight, pots, pots2, f1, f2,
                                lam=cfg.get("lambda", 0.0))
    _write_json(os.path.join(out, "alessandrini.json"), rep.summary())
    checks_cfg = cfg.get("checks", {})
    checks = {}
    if "residual_tol" in checks_cfg:
        checks["identity"] = bool(rep.residual < checks_cfg["residual_tol"])
    if "absolute_tol" in checks_cfg:
        checks["identity_absolute"] = bool(rep.absdiff < checks_cfg["absolute_tol"])
    return {"alessandrini.json": None}, checks, rep.summary()


def _cmd_runge(cfg, mesh, weight, pots, out, seed):
    asm = assemble(mesh, weight, pots, lam=cfg.get("lambda", 0.0))
    n = cfg.get("N", 64)
    d = build_dictionary(asm, n, family=cfg.get("family", "hats"), seed=seed)
    tgt = bulk_target(asm, seed=seed + 1)
    wnd = window_profile(0.02, 0.15, 0.85, 0.98)
    t1 = lambda p: wnd.ev(p[:, 0])[0]
    rows = []
    sizes = [m for m in (8, 16, 32, 64, 128) if m <= n] or [n]
    for m in sizes:
        rep = simultaneous_fit(d.prefix(m), t1, tgt, alpha=cfg.get("alpha", 0.0),
                               topology=cfg.get("topology", "l2"))
        rows.append(rep)
    with open(os.path.join(out, "runge_errors.csv"), "w") as fh:
        fh.write("N,boundary,bulk,combined,condition\n")
        for rep in rows:
            fh.write(f"{rep.n},{rep.boundary_error:.6e},{rep.bulk_error:.6e},"
                     f"{rep.combined_error:.6e},{rep.condition:.6e}\n")
    final = rows[-1]
    _write_json(os.path.join(out, "runge_fit.json"), final.summary())
    checks = {}
    tol = cfg.get("checks", {}).get("combined_tol")
    if tol is not None:
        checks["combined_error"] = bool(final.combined_error < tol)
    mono = all(rows[i + 1].combined_error <= rows[i].combined_error * 1.0 + 1e-12
               for i in range(len(rows) - 1))
    checks["nested_monotone"] = bool(mono)
    return ({"runge_errors.csv": None, "runge_fit.json": None}, checks,
            final.summary())


def _cmd_cgo_decay(cfg, mesh, weight, pots, out, seed):
    taus = _require(cfg, "taus", "cgo-decay")
    k = np.asarray(_require(cfg, "k", "cgo-decay"), dtype=float)
    rep = decay_sweep(k, weight.s, pots.V, pots.q, taus, mesh,
                      bc_mode=cfg.get("bc_mode", "minimum-norm"),
                      tolerance=cfg.get("checks", {}).get("slope_slack", 0.15))
    rep.to_csv(os.path.join(out, "decay.csv"))
    _write_json(os.path.join(out, "decay.json"), rep.summary())
    checks = {} if rep.trivial else {"decay_slopes": bool(rep.passed)}
    return {"decay.csv": None, "decay.json": None}, checks, rep.summary()


def admissible_test_field(mesh, seed: int):
    """Random test field vanishing to second order at the lateral/top walls
    and vertically constant in a slab above the bottom face."""
    rng = np.random.default_rng(seed)
    profiles = []
    for a in range(mesh.dim - 1):
        la = mesh.lengths[a]
        t0 = (0.06 + 0.04 * rng.uniform()) * la
        t1 = (0.18 + 0.06 * rng.uniform()) * la
        t2 = (0.74 + 0.06 * rng.uniform()) * la
        t3 = (0.9 + 0.05 * rng.uniform()) * la
        wnd = window_profile(t0, t1, t2, t3)
        tr = trig_profile(0.6 + 0.3 * rng.normal(size=3),
                          np.array([0.0, np.pi, 2 * np.pi]) / la,
                          rng.uniform(0, 2 * np.pi, 3))

        class _Prod:
            def __init__(self, w, t):
                self._w, self._t = w, t

            def ev(self, t):
                v1, d1, s1 = self._w.ev(t)
                v2, d2, s2 = self._t.ev(t)
                return v1 * v2, d1 * v2 + v1 * d2, s1 * v2 + 2 * d1 * d2 + v1 * s2

        profiles.append(_Prod(wnd, tr))
    lv = mesh.lengths[-1]
    profiles.append(flat_top_profile(0.15 * lv, 0.8 * lv))
    return tensor_field(profiles)


def _cmd_carleman(cfg, mesh, weight, pots, out, seed):
    taus = cfg.get("taus", [4, 8, 16, 32])
    n_fields = cfg.get("n_fields", 5)
    s = weight.s
    rows = []
    slopes = []
    for i in range(n_fields):
        u = admissible_test_field(mesh, seed + i)
        ratios = []
        for tau in taus:
            if s > 0.5 and mesh.dim < 3:
                # no horizontal null pair in 2D above one half
                raise ConfigInvalid("carleman: s > 1/2 requires a 3D mesh")
            params = construct_xi(np.zeros(mesh.dim), tau, s, mesh.dim)
            lhs, rhs, ratio = carleman_ratio(u, params, pots.V, pots.q, mesh)
            ratios.append(ratio)
            rows.append((i, tau, lhs, rhs, ratio))
        slopes.append(fit_upper_slope(taus, ratios))
    with open(os.path.join(out, "carleman.csv"), "w") as fh:
        fh.write("field,tau,lhs,rhs,ratio\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]},{r[2]:.8e},{r[3]:.8e},{r[4]:.8e}\n")
    tol = cfg.get("checks", {}).get("slope_tol", 0.1)
    summary = {"slopes": slopes, "max_slope": max(slopes), "taus": list(taus)}
    _write_json(os.path.join(out, "carleman.json"), summary)
    return ({"carleman.csv": None, "carleman.json": None},
            {"ratio_bounded": bool(max(slopes) <= tol)}, summary)


def _cmd_traces(cfg, mesh, weight, pots, out, seed):
    mus = cfg.get("mus", [1.0, 2.0, 4.0, 8.0, 10.0])
    n_fields = cfg.get("n_fields", 4)
    modes = cfg.get("modes", ["unweighted", "weighted"])
    rows, consts = [], {}
    meshes = {"coarse": mesh, "fine": mesh.refine()}
    for mode in modes:
        for label, msh in meshes.items():
            best = 0.0
            for i in range(n_fields):
                from .fields import random_smooth
                u = random_smooth(seed + i, 1.0, mesh.dim, n_modes=4, max_freq=2)
                for mu in mus:
                    r = trace_inequality_ratio(u, mu, weight.s, msh, mode=mode)
                    rows.append((mode, label, i, mu, r))
                    best = max(best, r)
            consts[f"{mode}/{label}"] = best
    with open(os.path.join(out, "traces.csv"), "w") as fh:
        fh.write("mode,mesh,field,mu,ratio\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]},{r[2]},{r[3]},{r[4]:.8e}\n")
    tol = cfg.get("checks", {}).get("variation_tol", 0.2)
    ok = True
    for mode in modes:
        c0, c1 = consts[f"{mode}/coarse"], consts[f"{mode}/fine"]
        ok &= abs(c1 - c0) / max(c0, 1e-300) < tol
    _write_json(os.path.join(out, "traces.json"), consts)
    return ({"traces.csv": None, "traces.json": None},
            {"constants_stable": bool(ok)}, consts)


def _cmd_reconstruct(cfg, mesh, weight, pots, out, seed):
    pots2 = _potentials_from(cfg, mesh.dim, "potentials2")
    grid_cfg = cfg.get("grid", {})
    bw = max(declared_bandwidth(pots.V) if pots.V else 0.0,
             declared_bandwidth(pots.q) if pots.q else 0.0,
             grid_cfg.get("bandwidth", 0.0)) or 8.0
    k_axes = [frequency_grid(bw, grid_cfg.get("n", 33), grid_cfg.get("factor", 1.5))
              for _ in range(mesh.dim)]
    samples = sample_pairing(mesh, weight.s, pots, pots2, k_axes,
                             mode=cfg.get("mode", "phase-only"),
                             tau=cfg.get("tau", 8.0))
    samples.to_csv(os.path.join(out, "samples.csv"))
    recover = cfg.get("recover", "v" if abs(weight.s - 0.5) < 1e-12 else "vq")
    checks, summary = {}, {"hermitian_defect": samples.hermitian_defect()}
    if recover == "v":
        rec = recover_v_fixed_q(samples, mesh)
    else:
        rec = recover_v_and_q(samples, mesh)
    save_field(os.path.join(out, "v_recovered.npz"), mesh, rec.v_field.ravel())
    summary["imag_residue"] = rec.imag_residue
    cc = cfg.get("checks", {})
    if pots.V is not None and "v_tol" in cc:
        truth = lambda p: np.asarray(pots.V(p)) - (np.asarray(pots2.V(p)) if pots2.V else 0.0)
        verr = rec.v_error(truth)
        summary["v_error"] = verr
        checks["v_recovery"] = bool(verr < cc["v_tol"])
    if recover == "vq" and pots.q is not None and "q_tol" in cc:
        qt = lambda p: np.asarray(pots.q(p)) - (np.asarray(pots2.q(p)) if pots2.q else 0.0)
        qerr = rec.q_error(qt)
        summary["q_error"] = qerr
        checks["q_recovery"] = bool(qerr < cc["q_tol"])
    if cc.get("roundtrip_tol"):
        res = resynthesize(rec, mesh, weight.s, k_axes)
        num = np.linalg.norm(res.values - samples.values)
        den = max(np.linalg.norm(samples.values), 1e-300)
        summary["roundtrip_residual"] = float(num / den)
        checks["roundtrip"] = bool(num / den < cc["roundtrip_tol"])
    _write_json(os.path.join(out, "reconstruct.json"), summary)
    return ({"samples.csv": None, "v_recovered.npz": None,
             "reconstruct.json": None}, checks, summary)


_COMMANDS = {
    "forward": _cmd_forward,
    "dtn": _cmd_dtn,
    "alessandrini": _cmd_alessandrini,
    "runge": _cmd_runge,
    "cgo-decay": _cmd_cgo_decay,
    "carleman": _cmd_carleman,
    "traces": _cmd_traces,
    "reconstruct": _cmd_reconstruct,
}


def run(config_path: str, out_dir: str | None = None, threads: int = 1,
        seed_override: int | None = None, no_cache: bool = False) -> dict:
    """Execute one experiment config; returns the manifest dict."""
    t_start = time.time()
    with open(config_path) as fh:
        cfg = json.load(fh)
    command = _require(cfg, "command", "config")
    if command not in _COMMANDS:
        raise ConfigInvalid(f"command: unknown value {command!r}")
    if no_cache:
        cfg["cache"] = False
    seed = int(seed_override if seed_override is not None else cfg.get("seed", 0))
    out = out_dir or cfg.get("output", "out")
    os.makedirs(out, exist_ok=True)
    mesh = _mesh_from(cfg)
    weight = _weight_from(cfg)
    pots = _potentials_from(cfg, mesh.dim)
    artifacts, checks, summary = _COMMANDS[command](cfg, mesh, weight, pots, out, seed)
    files = {}
    for name in artifacts:
        path = os.path.join(out, name)
        with open(path, "rb") as fh:
            files[name] = hashlib.sha256(fh.read()).hexdigest()
    manifest = {
        "tool": "degenlab",
        "version": __version__,
        "command": command,
        "config_digest": content_digest(cfg),
        "cache_key": cache_key(mesh.descriptor(), weight.descriptor(),
                               pots.descriptor()),
        "seed": seed,
        "elapsed_s": time.time() - t_start,
        "artifacts": files,
        "checks": checks,
        "passed": all(checks.values()) if checks else True,
        "summary": summary,
    }
    _write_json(os.path.join(out, "manifest.json"), manifest)
    return manifest


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="degenlab",
        description="Degenerate mixed boundary-value laboratory: run one "
                    "experiment described by a JSON config.")
    ap.add_argument("--config", required=True, help="path to the experiment config")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--no-cache", action="store_true")
    ap.add_argument("--seed", type=int, default=None, help="override config seed")
    args = ap.parse_args(argv)
    try:
        manifest = run(args.config, out_dir=args.out, threads=args.threads,
                       seed_override=args.seed, no_cache=args.no_cache)
    except (DegenlabError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name, ok in manifest["checks"].items():
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")
    print(f"manifest: {manifest['command']} passed={manifest['passed']} "
          f"elapsed={manifest['elapsed_s']:.1f}s")
    return 0 if manifest["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
