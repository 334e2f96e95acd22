"""Command-line entry point: ``levysle <command> [flags]``.

Every run writes ``manifest.json`` (the fully resolved configuration), its
data files, ``summary.txt`` and ``timing.json``.  ``levysle rerun
manifest.json`` repeats a run; all files except ``timing.json`` come out
byte-identical.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time as _time
from pathlib import Path

import numpy as np

from . import __version__
from . import io as lio
from .comb import comb_verify, comb_xi
from .levy_driver import StableParams, combined_driver
from .loewner import build_chain, hull_grid
from .stats_verify import (
    DyadicEventSpec,
    MomentSpec,
    derivative_tail_sweep,
    duality_mc,
    jump_tail_mc,
    moment_mc,
    oscillation_mc,
    supermartingale_mc,
)
from .superharmonic import (
    OperatorParams,
    RegimeError,
    ScanGrid,
    TestFunctionParams,
    regime_of,
    superharmonicity_scan,
)
from .trace import trace_curve

__all__ = ["main", "build_parser", "run", "resolve_config", "PRESETS", "OUTPUT_ENV", "ConfigError"]

OUTPUT_ENV = "LEVYSLE_OUTPUT_DIR"
DEFAULT_OUTPUT = "levysle-out"

COMMANDS = ("simulate", "trace", "hull", "verify-superharmonic", "verify-moments", "verify-jumps",
            "verify-oscillation", "verify-duality", "verify-supermartingale", "verify-derivative-tail", "comb")
CURVE_COMMANDS = {"trace", "hull", "verify-derivative-tail", "verify-supermartingale"}


def _preset_b(kappa):
    return min(1.0, (4 + kappa) / (4 * kappa))


# b = min(1, (4 + kappa) / (4 kappa)) except at kappa = 6, where that value
# (5/12) lies outside the b > 1/2 range required below kappa = 8.
PRESETS = {
    "subcritical": {"kappa": 2.0, "b": _preset_b(2.0), "kappa1": 2.5},
    "intermediate": {"kappa": 6.0, "b": 0.75, "kappa1": 7.0},
    "supercritical": {"kappa": 9.0, "b": _preset_b(9.0), "kappa2": 8.5, "a_prime": 0.5},
}


class ConfigError(ValueError):
    pass


def _floats(s):
    return [float(v) for v in s.split(",") if v.strip()]


def _add_driver(p, horizon=1.0, step=1e-3):
    p.add_argument("--kappa", type=float)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=1.2)
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--eps", type=float, default=None, help="small-jump cutoff (default delta/64)")
    p.add_argument("--horizon", type=float, default=horizon)
    p.add_argument("--step", type=float, default=step)
    p.add_argument("--truncated", action="store_true", help="drop stable jumps of size >= delta")


def _add_testfn(p):
    p.add_argument("--b", type=float)
    p.add_argument("--kappa1", type=float)
    p.add_argument("--kappa2", type=float)
    p.add_argument("--a-prime", dest="a_prime", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="levysle", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--output-dir", dest="output_dir", default=None,
                        help=f"default: ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT}")
    common.add_argument("--formats", default="csv,json,svg")
    common.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    common.add_argument("--preset", choices=sorted(PRESETS))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="sample a driver path")
    _add_driver(p)

    p = sub.add_parser("trace", parents=[common], help="trace of the Loewner chain")
    _add_driver(p)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--y-min", dest="y_min", type=float, default=1e-10)
    p.add_argument("--n-points", dest="n_points", type=int, default=257)
    p.add_argument("--max-step", dest="max_step", type=float, default=None)
    p.add_argument("--width", type=int, default=600)
    p.add_argument("--height", type=int, default=400)
    p.add_argument("--scale", type=float, default=None)

    p = sub.add_parser("hull", parents=[common], help="hull raster at time t")
    _add_driver(p)
    p.add_argument("--t", type=float, default=None, help="default: horizon")
    p.add_argument("--resolution", type=float, default=0.02)
    p.add_argument("--window", type=_floats, default=None, help="xmin,xmax,ymin,ymax")
    p.add_argument("--max-step", dest="max_step", type=float, default=None)

    p = sub.add_parser("verify-superharmonic", parents=[common], help="sign scan of Lambda F1")
    p.add_argument("--kappa", type=float)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=1.2)
    _add_testfn(p)
    p.add_argument("--brownian", action="store_true", help="use the harmonic exponents instead of the map")
    p.add_argument("--deltas", type=_floats, default=[1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125])
    p.add_argument("--u-max", dest="u_max", type=float, default=100.0)
    p.add_argument("--n-u", dest="n_u", type=int, default=41)
    p.add_argument("--y-lo", dest="y_lo", type=float, default=1e-2)
    p.add_argument("--y-hi", dest="y_hi", type=float, default=1.0)
    p.add_argument("--n-y", dest="n_y", type=int, default=13)
    p.add_argument("--sign-tol", dest="sign_tol", type=float, default=0.0)

    p = sub.add_parser("verify-moments", parents=[common], help="truncated stable moments")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--samples", type=int, default=100000)

    p = sub.add_parser("verify-jumps", parents=[common], help="dyadic jump-count tail")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.5)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--L", type=int, default=None)
    p.add_argument("--samples", type=int, default=100000)

    p = sub.add_parser("verify-oscillation", parents=[common], help="dyadic oscillation bounds")
    p.add_argument("--alpha", type=float, default=1.2)
    p.add_argument("--beta", type=float, default=1.5)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--n-grid", dest="n_grid", type=int, default=256)

    p = sub.add_parser("verify-duality", parents=[common], help="backward flow vs inverse map in law")
    p.add_argument("--kappa", type=float)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=1.2)
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--t", type=float, default=0.25)
    p.add_argument("--z", type=complex, default=1j)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--step", type=float, default=1e-3)

    p = sub.add_parser("verify-supermartingale", parents=[common], help="stopped backward-flow bound")
    p.add_argument("--kappa", type=float)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=1.2)
    p.add_argument("--delta", type=float, default=0.25)
    _add_testfn(p)
    p.add_argument("--brownian", action="store_true")
    p.add_argument("--z", type=complex, default=1j)
    p.add_argument("--u", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=100000)
    p.add_argument("--eta", type=float, default=1e-3)

    p = sub.add_parser("verify-derivative-tail", parents=[common], help="derivative tail constant sweep")
    p.add_argument("--kappa", type=float)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=1.2)
    p.add_argument("--delta", type=float, default=0.25)
    _add_testfn(p)
    p.add_argument("--brownian", action="store_true")
    p.add_argument("--x", type=float, default=0.0)
    p.add_argument("--ys", type=_floats, default=[0.5, 0.25, 0.125, 0.0625])
    p.add_argument("--rhos", type=_floats, default=[0.25, 0.125])
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=50000)
    p.add_argument("--eta", type=float, default=4e-3)
    p.add_argument("--factor", type=float, default=3.0)

    p = sub.add_parser("comb", parents=[common], help="comb-space curve and checks")
    p.add_argument("--budget", type=int, default=4)
    p.add_argument("--density", type=float, default=4096.0)
    p.add_argument("--n-samples", dest="n_samples", type=int, default=4097)

    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--output-dir", dest="output_dir", default=None)
    return parser


def resolve_config(ns: argparse.Namespace) -> dict:
    """Fill presets and defaults; validate the parameter regime."""
    cfg = {k: v for k, v in vars(ns).items() if k != "output_dir"}
    preset = cfg.get("preset")
    if preset:
        for k, v in PRESETS[preset].items():
            if k in cfg and cfg[k] is None:
                cfg[k] = v
    if "kappa" in cfg and cfg["kappa"] is None:
        cfg["kappa"] = 2.0
    if "a_prime" in cfg and cfg["a_prime"] is None:
        cfg["a_prime"] = 0.0
    kappa = cfg.get("kappa")
    if cfg["command"] in CURVE_COMMANDS and kappa in (4.0, 8.0):
        raise ConfigError(f"kappa={kappa:g} is unsupported for {cfg['command']}: the derivative "
                          "estimates behind the trace construction do not cover kappa in {4, 8}")
    if "b" in cfg:
        if cfg["b"] is None:
            cfg["b"] = PRESETS["intermediate"]["b"] if kappa == 6.0 else _preset_b(kappa)
        try:
            regime = regime_of(kappa, cfg["b"])
        except RegimeError as exc:
            raise ConfigError(str(exc)) from None
        if not cfg.get("brownian"):
            if regime == "subcritical" and cfg.get("kappa1") is None:
                cfg["kappa1"] = min(kappa + 0.5, (kappa + 8) / 2)
            if regime == "supercritical" and cfg.get("kappa2") is None:
                cfg["kappa2"] = max(kappa - 0.5, (kappa + 8) / 2)
    if "formats" in cfg and isinstance(cfg["formats"], str):
        cfg["formats"] = sorted(f for f in cfg["formats"].split(",") if f)
    if "z" in cfg and isinstance(cfg["z"], complex):
        cfg["z"] = [cfg["z"].real, cfg["z"].imag]
    return cfg


def _stable(cfg) -> StableParams:
    return StableParams(alpha=cfg["alpha"], theta=cfg["theta"], kappa=cfg["kappa"], delta=cfg["delta"],
                        eps_smalljump=cfg.get("eps"))


def _testfn(cfg) -> TestFunctionParams:
    if cfg.get("brownian"):
        return TestFunctionParams.brownian(cfg["b"], cfg["kappa"])
    return TestFunctionParams.from_param_map(cfg["b"], kappa1=cfg.get("kappa1"), kappa2=cfg.get("kappa2"),
                                             a_prime=cfg.get("a_prime") or 0.0)


def _operator(cfg, delta) -> OperatorParams:
    return OperatorParams(cfg["kappa"], cfg["theta"], cfg["alpha"], delta, cfg.get("kappa1"),
                          cfg.get("kappa2"), cfg.get("a_prime") or 0.0)


def _z(cfg) -> complex:
    return complex(cfg["z"][0], cfg["z"][1])


def _run_command(cfg: dict, out: Path) -> tuple[list[Path], list[str], bool]:
    cmd = cfg["command"]
    fmts = set(cfg["formats"])
    files: list[Path] = []
    lines: list[str] = []
    ok = True

    if cmd in ("simulate", "trace", "hull"):
        path = combined_driver(_stable(cfg), cfg["horizon"], cfg["step"], cfg["seed"], cfg["truncated"])
        if cmd == "simulate":
            if "csv" in fmts:
                files.append(lio.path_to_csv(path, out / "driver.csv"))
            files.append(lio.jumps_to_json(path, out / "jumps.json"))
            lines.append(f"driver: {path.grid.size} grid points, {path.jump_times.size} recorded jumps")
        chain = build_chain(path, cfg.get("max_step") or cfg["step"])
        if cmd == "trace":
            grid = np.linspace(0.0, cfg["horizon"], cfg["n_points"])
            curve = trace_curve(chain, path, grid, cfg["tol"], cfg["y_min"])
            if "csv" in fmts:
                files.append(lio.trace_to_csv(curve, out / "trace.csv"))
            if "json" in fmts:
                files.append(lio.chain_to_json(chain, out / "chain.json"))
            if "svg" in fmts:
                times = curve.times
                breaks = [int(np.searchsorted(times, jt)) for jt in curve.jump_times]
                files.append(lio.trace_svg(out / "trace.svg", curve.points, width=cfg["width"],
                                           height=cfg["height"], scale=cfg["scale"], jumps_break=breaks))
            n_conv = int(curve.converged.sum())
            lines.append(f"trace: {len(curve.samples)} samples, {n_conv} converged at tol {cfg['tol']:g}")
        if cmd == "hull":
            t = cfg["t"] if cfg["t"] is not None else cfg["horizon"]
            window = cfg["window"]
            if window is None:
                r = 2.5 * math.sqrt(max(t, 1e-12)) + (abs(path.values).max() if path.values.size else 0)
                window = [-r, r, 0.0, 2.5 * math.sqrt(t) + 0.25]
            hull = hull_grid(chain, t, tuple(window), cfg["resolution"])
            if "csv" in fmts:
                files.append(lio.hull_to_csv(hull, out / "hull.csv"))
            if "json" in fmts:
                files.append(lio.chain_to_json(chain, out / "chain.json"))
            if "svg" in fmts:
                from .trace import discrete_trace
                pts = discrete_trace(chain, np.linspace(0, t, 257))
                files.append(lio.trace_svg(out / "hull.svg", pts, hull=hull))
            lines.append(f"hull: {int(hull.swallowed.sum())} of {hull.swallowed.size} nodes swallowed at t={t:g}")
        return files, lines, ok

    if cmd == "comb":
        rep = comb_verify(cfg["budget"], cfg["density"], seed=cfg["seed"])
        ts = np.linspace(0.0, 2.0, cfg["n_samples"])
        samples = [(float(t), *comb_xi(float(t)).as_float()) for t in ts]
        if "csv" in fmts:
            files.append(lio.comb_to_csv(samples, out / "comb.csv"))
        if "svg" in fmts:
            files.append(lio.comb_svg(out / "comb.svg", samples))
        files.append(lio.write_json(out / "report.json", rep.to_dict(include_wall_time=False)))
        lines.append(rep.summary())
        return files, lines, rep.passed

    if cmd == "verify-superharmonic":
        tf = _testfn(cfg)
        grid = ScanGrid(cfg["u_max"], cfg["n_u"], cfg["y_lo"], cfg["y_hi"], cfg["n_y"])
        rep, values = superharmonicity_scan(_operator(cfg, cfg["deltas"][0]), tf, grid, cfg["deltas"],
                                            sign_tol=cfg["sign_tol"], return_values=True)
        if "csv" in fmts:
            pts = grid.points()
            rows = [(d, z.real, z.imag, v) for d in sorted(values) for z, v in zip(pts, values[d])]
            files.append(lio.write_csv(out / "scan.csv", ["delta", "x", "y", "lambda_F1"], rows))
    elif cmd == "verify-moments":
        rep = moment_mc(MomentSpec(cfg["c"], cfg["t"], cfg["k"], cfg["alpha"]), cfg["samples"], cfg["seed"])
    elif cmd == "verify-jumps":
        rep = jump_tail_mc(DyadicEventSpec(cfg["n"], cfg["beta"], cfg["alpha"], cfg["L"]), cfg["samples"],
                           cfg["seed"])
    elif cmd == "verify-oscillation":
        rep = oscillation_mc(DyadicEventSpec(cfg["n"], cfg["beta"], cfg["alpha"]), cfg["samples"], cfg["seed"],
                             n_grid=cfg["n_grid"])
    elif cmd == "verify-duality":
        cfg_d = dict(cfg, eps=None)
        rep = duality_mc(_stable(cfg_d), _z(cfg), cfg["t"], cfg["samples"], cfg["seed"], step=cfg["step"])
    elif cmd == "verify-supermartingale":
        rep = supermartingale_mc(_operator(cfg, cfg["delta"]), _testfn(cfg), _z(cfg), cfg["u"], cfg["samples"],
                                 cfg["seed"], eta=cfg["eta"])
    elif cmd == "verify-derivative-tail":
        rep = derivative_tail_sweep(_operator(cfg, cfg["delta"]), _testfn(cfg), cfg["x"], cfg["ys"], cfg["rhos"],
                                    cfg["t"], cfg["samples"], cfg["seed"], factor=cfg["factor"], eta=cfg["eta"])
    else:  # pragma: no cover - argparse restricts the choices
        raise ConfigError(f"unknown command {cmd}")
    files.append(lio.write_json(out / "report.json", rep.to_dict(include_wall_time=False)))
    lines.append(rep.summary())
    return files, lines, rep.passed


def _apply_threads(n: int):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(max(1, int(n)))


def run(cfg: dict, output_dir=None) -> int:
    """Execute a resolved configuration; returns the process exit status."""
    out = Path(output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
    out.mkdir(parents=True, exist_ok=True)
    if "threads" in cfg:
        _apply_threads(cfg["threads"])
    t0 = _time.perf_counter()
    if cfg["command"] in CURVE_COMMANDS and cfg.get("kappa") in (4.0, 8.0):
        raise ConfigError(f"kappa={cfg['kappa']:g} is unsupported for {cfg['command']}")
    files, lines, ok = _run_command(cfg, out)
    manifest = {"version": __version__, "config": cfg,
                "files": {p.name: lio.sha256_file(p) for p in sorted(set(files))}}
    lio.write_json(out / "manifest.json", manifest)
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    lio.write_json(out / "timing.json", {"wall_time": _time.perf_counter() - t0})
    for line in lines:
        print(line)
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        if ns.command == "rerun":
            cfg = json.loads(Path(ns.manifest).read_text(encoding="utf-8"))["config"]
            return run(cfg, ns.output_dir)
        cfg = resolve_config(ns)
        return run(cfg, ns.output_dir)
    except (ConfigError, ValueError) as exc:
        print(f"levysle: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
