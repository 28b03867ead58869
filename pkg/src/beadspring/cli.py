"""Command-line entry point: ``beadspring <subcommand>``.

Subcommands
-----------
simulate   one trajectory, ``trajectory.csv``
ensemble   ``n`` trajectories, ``summaries.json``
control    ``plan.json``, ``control.csv`` and ``tracking.json``
diagnose   ``diagnose_<name>.json`` per selected diagnostic
config     print the fully explicit configuration

Every run also writes ``manifest.json`` (configuration echo, seed, package
version and a SHA-256 of each output). Failures print a JSON error object
on stderr and exit nonzero; no output file is written in that case.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import rng as _rng
from .config import DIAGNOSTICS, ConfigError, RunConfig, parse_config
from .control import (
    ControlBoundWarning,
    plan_path,
    synthesize_control,
    verify_tracking,
)
from .diagnostics import (
    LyapunovParams,
    bad_set_radius,
    choose_lyapunov_params,
    ergodic_convergence,
    escape_time_stats,
    estimate_drift,
    hookean_decay_test,
    hormander_rank_check,
    tube_occupancy,
)
from .dynamics import Batch, SystemState, integrate, run_ensemble, stationary_state
from .io import csv_text, dumps_json, sha256, write_all
from .spectral_fluid import sigma_norm, stationary_variance

__all__ = ["main", "dispatch", "build_parser"]

EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def lyapunov_params(cfg: RunConfig) -> LyapunovParams:
    cert = cfg.certificate
    if not cert.passed_large_r:
        raise ValueError("potential not certified at large |r|; Lyapunov constants unavailable")
    return choose_lyapunov_params(cert.gamma, cfg.fluid, cfg.modes, cert.R0, cfg["lyapunov.delta"])


def _initial_state(cfg: RunConfig, index: int, noise) -> SystemState:
    r0 = np.array(cfg["run.r0"])
    if cfg["run.initial_fluid"] == "zero":
        return SystemState.at(r0, np.zeros(len(cfg.modes)))
    return stationary_state(cfg.modes, cfg.fluid, r0, noise, index)


def _eps1(cfg: RunConfig, lp: LyapunovParams) -> float:
    v = cfg["control.eps1"]
    if v != "auto":
        return float(v)
    if not cfg.certificate.passed_small_r:
        raise ValueError("control.eps1 = auto needs a potential certified near the origin; set eps1 explicitly")
    eps, _ = bad_set_radius(
        cfg.potential, cfg.modes, cfg.fluid, lp, 200, _rng.CounterNoise(cfg.seed), certificate=cfg.certificate
    )
    return eps


# subcommands ------------------------------------------------------------------


def _simulate(cfg: RunConfig) -> dict:
    noise = _rng.CounterNoise(cfg.seed)
    try:
        lp = lyapunov_params(cfg)
    except ValueError:
        lp = None
    init = _initial_state(cfg, 0, noise)
    obs = ("r", "norm_r", "z") + (("V",) if lp is not None else ())
    b = Batch.from_states([init], ids=[0])
    _, times, rec, _ = integrate(b, cfg.sim, cfg.modes, cfg["run.horizon"], noise, obs, lyapunov=lp)
    N = len(cfg.modes)
    V = rec["V"][:, 0] if lp is not None else np.full(len(times), np.nan)
    rows = (
        [t, *rec["r"][i, 0], rec["norm_r"][i, 0], V[i], *rec["z"][i, 0]]
        for i, t in enumerate(times)
    )
    header = ["t", "rx", "ry", "|r|", "V"] + [f"z_{j + 1}" for j in range(N)]
    files = {}
    if "csv" in cfg["run.formats"]:
        files["trajectory.csv"] = csv_text(header, rows)
    if "json" in cfg["run.formats"]:
        files["trajectory.json"] = dumps_json(
            {
                "t": times,
                "r": rec["r"][:, 0],
                "norm_r": rec["norm_r"][:, 0],
                "V": V,
                "z": rec["z"][:, 0],
            }
        )
    return files


def _ensemble(cfg: RunConfig) -> dict:
    noise = _rng.CounterNoise(cfg.seed)
    n = cfg["run.n"]
    summaries = run_ensemble(
        lambda i: _initial_state(cfg, i, noise),
        cfg.sim,
        cfg.modes,
        cfg["run.horizon"],
        ("norm_r",),
        master_seed=cfg.seed,
        n=n,
    )
    nr = np.array([s["norm_r_final"] for s in summaries])
    report = {
        "n": n,
        "horizon": cfg["run.horizon"],
        "seed": cfg.seed,
        "aggregate": {
            "mean_norm_r_final": float(nr.mean()),
            "std_norm_r_final": float(nr.std(ddof=1)) if n > 1 else 0.0,
            "min_norm_r": float(min(s["min_norm_r"] for s in summaries)),
        },
        "summaries": summaries,
    }
    return {"summaries.json": dumps_json(report)}


def _control(cfg: RunConfig) -> dict:
    lp = lyapunov_params(cfg)
    eps1 = _eps1(cfg, lp)
    plan = plan_path(cfg["control.r0"], cfg["control.r_star"], eps1, lp.R0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ControlBoundWarning)
        sig = synthesize_control(plan, cfg.potential, cfg.modes, cfg.fluid, cfg["control.samples_per_unit"])
    tube = cfg["control.tube_eps"]
    gen = np.random.default_rng(cfg.seed)
    err0 = verify_tracking(sig, plan, cfg.potential, cfg.modes, cfg.fluid, 0.0, gen)
    err = verify_tracking(sig, plan, cfg.potential, cfg.modes, cfg.fluid, tube, np.random.default_rng(cfg.seed)) if tube > 0 else err0
    N = len(cfg.modes)
    tracking = {
        "eps1": eps1,
        "R0": lp.R0,
        "total_time": plan.total_time,
        "sup_norm": sig.sup_norm,
        "bound": sig.bound,
        "bound_exceeded": bool(sig.sup_norm > sig.bound),
        "warnings": [str(w.message) for w in caught],
        "sup_error_exact": err0,
        "tube_eps": tube,
        "sup_error_tube": err,
    }
    return {
        "plan.json": dumps_json(plan.to_dict()),
        "control.csv": csv_text(["t"] + [f"z_{j + 1}" for j in range(N)], ([t, *z] for t, z in zip(sig.times, sig.z))),
        "tracking.json": dumps_json(tracking),
    }


def _diag_hookean(cfg):
    ms, fp = cfg.modes, cfg.fluid
    base = fp.lam * math.sqrt(fp.beta) * sigma_norm(ms, 0.0)
    gamma = cfg["diagnose.hookean_gamma_factor"] * base
    if gamma <= base:
        raise ValueError("hookean_gamma_factor must exceed 1")
    T = min(5.0 / (2.0 * gamma - 2.0 * base) * math.log(1e6), 50.0)
    rep = hookean_decay_test(gamma, ms, fp, T, cfg["diagnose.hookean_n"], _rng.CounterNoise(cfg.seed))
    out = rep.to_dict()
    out["gamma"] = gamma
    return out, None


def _diag_escape(cfg):
    lp = lyapunov_params(cfg)
    eps = cfg["diagnose.escape_eps"]
    eps = cfg.certificate.eps0 if eps == "auto" else eps
    st = escape_time_stats(
        cfg.potential,
        cfg.modes,
        cfg.fluid,
        eps,
        lp.R0,
        math.sqrt(2.0) * lp.R0 / lp.eta,
        cfg["diagnose.escape_n"],
        _rng.CounterNoise(cfg.seed),
        horizon=cfg["diagnose.escape_horizon"],
        dt=cfg.sim.dt,
        certificate=cfg.certificate,
    )
    return st.to_dict(), None


def drift_initials(lp: LyapunovParams, count: int, n_modes: int):
    """Initials at rest fluid with ``V(x0)`` spanning two decades above ``2 C2 / a``."""
    v0 = np.geomspace(2.2 * lp.C2 / lp.a, 220.0 * lp.C2 / lp.a, count)
    return [SystemState.at([math.sqrt(v), 0.0], np.zeros(n_modes)) for v in v0]


def _diag_drift(cfg):
    lp = lyapunov_params(cfg)
    inits = drift_initials(lp, cfg["diagnose.drift_initials"], len(cfg.modes))
    est = estimate_drift(inits, cfg.sim, cfg.modes, lp, cfg["diagnose.drift_t"], cfg["diagnose.drift_n"], _rng.CounterNoise(cfg.seed))
    out = {
        "c0": est.c0,
        "c1": est.c1,
        "c0_se": est.c0_se,
        "c1_se": est.c1_se,
        "c0_upper95": est.c0_upper95,
        "envelope_violations": est.envelope_violations,
        "lyapunov": lp.to_dict(),
        "records": est.records,
    }
    rows = ([r["V0"], r["mean"], r["se"], r["bound"]] for r in est.records)
    return out, csv_text(["V0", "mean_V", "se", "bound"], rows)


def annulus_samples(n: int, inner: float, outer: float, seed: int) -> np.ndarray:
    """Area-uniform points of the annulus ``inner <= |r| <= outer``."""
    u = _rng.CounterNoise(seed).normals(np.arange(n), 0, _rng.AUX, 2)
    from scipy.special import ndtr

    v = ndtr(u)
    rho = np.sqrt(inner**2 + (outer**2 - inner**2) * v[:, 0])
    ang = 2 * math.pi * v[:, 1]
    return rho[:, None] * np.column_stack([np.cos(ang), np.sin(ang)])


def _diag_hormander(cfg):
    cert = cfg.certificate
    inner = cert.eps0 if cert.passed_small_r else cert.r_floor
    outer = math.sqrt(2.0) * cert.R0
    pts = annulus_samples(cfg["diagnose.hormander_samples"], inner, outer, cfg.seed)
    ranks = np.array([hormander_rank_check(cfg.modes, cfg.fluid, cfg.potential, p)[0] for p in pts])
    dim = 2 + len(cfg.modes)
    return {
        "rank": int(ranks.min()),
        "full": bool(np.all(ranks == dim)),
        "dimension": dim,
        "samples": len(pts),
        "full_fraction": float(np.mean(ranks == dim)),
        "annulus": [inner, outer],
    }, None


def _diag_converge(cfg):
    lp = lyapunov_params(cfg)
    eps1 = _eps1(cfg, lp)
    N = len(cfg.modes)
    A = SystemState.at([eps1, 0.0], np.zeros(N))
    B = SystemState.at([math.sqrt(2.0) * lp.R0, 0.0], np.zeros(N))
    rep = ergodic_convergence(A, B, cfg.sim, cfg.modes, cfg["diagnose.converge_times"], cfg["diagnose.converge_n"], _rng.CounterNoise(cfg.seed))
    out = rep.to_dict()
    out["eps1"] = eps1
    rows = ([t, d, f] for t, d, f in zip(rep.times, rep.distances, rep.noise_floor))
    return out, csv_text(["t", "distance", "noise_floor"], rows)


def _diag_tube(cfg):
    lp = lyapunov_params(cfg)
    eps1 = _eps1(cfg, lp)
    start = np.array(cfg["control.r0"], float)
    tangent = np.array([-start[1], start[0]]) / np.hypot(*start)
    length = cfg["diagnose.tube_length"]
    plan = plan_path(start, start + length * tangent, eps1, lp.R0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ControlBoundWarning)
        sig = synthesize_control(plan, cfg.potential, cfg.modes, cfg.fluid, cfg["control.samples_per_unit"])
    std = math.sqrt(float(np.sum(stationary_variance(cfg.modes, cfg.fluid))))
    tube = cfg["diagnose.tube_eps_factor"] * std
    n = cfg["diagnose.tube_n"]
    p = tube_occupancy(cfg.modes, cfg.fluid, sig, tube, n, _rng.CounterNoise(cfg.seed))
    return {
        "probability": p,
        "hits": int(round(p * n)),
        "n": n,
        "tube_eps": tube,
        "stationary_std": std,
        "duration": sig.duration,
        "control_sup_norm": sig.sup_norm,
    }, None


_DIAGNOSE = {
    "hookean": _diag_hookean,
    "escape": _diag_escape,
    "drift": _diag_drift,
    "hormander": _diag_hormander,
    "converge": _diag_converge,
    "tube": _diag_tube,
}


def _diagnose(cfg: RunConfig, names: Sequence[str]) -> dict:
    files = {}
    for name in names or DIAGNOSTICS:
        report, curve = _DIAGNOSE[name](cfg)
        files[f"diagnose_{name}.json"] = dumps_json(report)
        if curve is not None and "csv" in cfg["run.formats"]:
            files[f"diagnose_{name}.csv"] = curve
    return files


def dispatch(subcommand: str, cfg: RunConfig, diagnostics: Sequence[str] = (), output_dir: Optional[str] = None) -> list:
    """Run ``subcommand`` and write its outputs plus ``manifest.json``.

    Returns the written paths. All contents are produced before the first
    write, so a failing run leaves nothing behind.
    """
    if subcommand == "simulate":
        files = _simulate(cfg)
    elif subcommand == "ensemble":
        files = _ensemble(cfg)
    elif subcommand == "control":
        files = _control(cfg)
    elif subcommand == "diagnose":
        files = _diagnose(cfg, diagnostics)
    else:
        raise ValueError(f"unknown subcommand {subcommand!r}")
    data = {k: v.encode() for k, v in files.items()}
    manifest = {
        "command": subcommand,
        "diagnostics": list(diagnostics) if subcommand == "diagnose" else [],
        "seed": cfg.seed,
        "package_version": __version__,
        "config": cfg.to_text(include_output_dir=False),
        "outputs": {k: sha256(v) for k, v in data.items()},
    }
    data["manifest.json"] = dumps_json(manifest).encode()
    return write_all(output_dir or cfg.output_dir, data)


def _common(suppress: bool) -> argparse.ArgumentParser:
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("-c", "--config", help="INI configuration file (defaults for every key)", **kw)
    p.add_argument("-o", "--output-dir", help="output directory (overrides run.output_dir and $BEADSPRING_OUTPUT_DIR)", **kw)
    p.add_argument("--seed", type=int, help="master seed (overrides run.seed)", **kw)
    return p


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="beadspring",
        description="Bead-spring connector in a stochastic Stokes fluid.",
        parents=[_common(False)],
    )
    sub = p.add_subparsers(dest="command", required=True)
    common = [_common(True)]
    sub.add_parser("simulate", parents=common, help="one trajectory to trajectory.csv")
    sub.add_parser("ensemble", parents=common, help="n trajectories to summaries.json")
    sub.add_parser("control", parents=common, help="plan, control samples and tracking report")
    d = sub.add_parser("diagnose", parents=common, help="diagnostic reports")
    d.add_argument("names", nargs="*", metavar="NAME", help=f"any of {', '.join(DIAGNOSTICS)} (default: all)")
    sub.add_parser("config", parents=common, help="print the explicit configuration")
    return p


def _error(exc: BaseException, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("key", "line"):
        if getattr(exc, attr, None) is not None:
            payload[attr] = getattr(exc, attr)
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    bad = [n for n in getattr(args, "names", ()) if n not in DIAGNOSTICS]
    if bad:
        parser.error(f"unknown diagnostic(s) {bad}; choose from {list(DIAGNOSTICS)}")
    try:
        text = ""
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        cfg = parse_config(text)
        if args.seed is not None:
            cfg = cfg.with_overrides(run__seed=args.seed)
    except (ConfigError, OSError) as exc:
        return _error(exc, EXIT_CONFIG)
    if args.command == "config":
        sys.stdout.write(cfg.to_text())
        return 0
    try:
        paths = dispatch(args.command, cfg, getattr(args, "names", ()), args.output_dir)
    except Exception as exc:  # reported as JSON on stderr
        return _error(exc, EXIT_RUNTIME)
    for path in paths:
        sys.stdout.write(path + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
