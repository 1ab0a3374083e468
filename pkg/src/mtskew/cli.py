"""Command-line entry point.

Every subcommand writes CSV/JSON files to ``<out>/<command>/`` together
with ``manifest.json`` (resolved config, derived constants, version and a
SHA-256 per emitted file) and ``timing.json`` (wall-clock only, kept out
of the manifest so that manifests of identical runs are identical).

Exit codes: 0 success, 1 configuration error, 2 runtime error. Errors
are printed to stderr as JSON and, when possible, written to
``<out>/<command>/error.json``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
import warnings
from functools import cached_property
from pathlib import Path

import numpy as np
from numpy.polynomial import polynomial as npoly

from . import __version__
from .config import ExperimentConfig, load_config
from .curves import (check_linear_approx, check_nonflat, curve_recurrence, evolve_horizontal,
                     horizontal, random_words, separation_test)
from .errors import ConfigError, MTSkewError, NoSeparation
from .expanding import build_model, distortion_report, markov_partition
from .measures import (attractor, base_ulam, build_ulam, critical_return_test, crossing_curve,
                       dump_and_recompute, recurrence_delta, slow_recurrence,
                       uniqueness_diagnostic, vertical_exponent_vs_bound)
from .mt_params import MTCertificate, check_topological_exactness, find_mt_parameter
from .rng import generator
from .skew import build_system, compute_constants, estimate_sigma, lyapunov_exponents

COMMANDS = ("find-param", "build-coords", "lyapunov", "curves", "measure", "recurrence")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def _dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Output:
    """Collects the files of one command and writes the manifest."""

    def __init__(self, root: Path, command: str):
        self.dir = Path(root) / command
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.files = []

    def json(self, name, obj):
        (self.dir / name).write_text(_dumps(obj), encoding="utf-8")
        self.files.append(name)

    def csv(self, name, header, rows):
        with open(self.dir / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
        self.files.append(name)

    def finish(self, cfg: ExperimentConfig, derived: dict, elapsed: float):
        config = cfg.to_dict()
        # the output location is not an experimental parameter
        config["run"].pop("out", None)
        manifest = {
            "command": self.command,
            "version": __version__,
            "config": config,
            "derived": derived,
            "files": {f: sha256(self.dir / f) for f in sorted(self.files)},
        }
        (self.dir / "manifest.json").write_text(_dumps(manifest), encoding="utf-8")
        (self.dir / "timing.json").write_text(_dumps({"wall_clock_s": elapsed}), encoding="utf-8")
        return manifest


class Context:
    """Lazily built objects shared by the subcommands of one run."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.seed = cfg.get("run", "seed")
        self.workers = cfg.get("run", "workers")

    def _cert(self, sec):
        s = self.cfg[sec]
        if s["value"]:
            return MTCertificate.from_value(s["value"], s["preperiod"], s["period"])
        return find_mt_parameter(s["preperiod"], s["period"], tuple(s["bracket"]))

    @cached_property
    def base_cert(self):
        return self._cert("base")

    @cached_property
    def fiber_cert(self):
        return self._cert("fiber")

    @cached_property
    def model(self):
        m1 = self.cfg.get("base", "m1") or None
        return build_model(self.base_cert, m1)

    @cached_property
    def system(self):
        c = self.cfg["coupling"]
        return build_system(self.model, self.fiber_cert, c["alpha"], c["phi"])

    @cached_property
    def sigma_fit(self):
        s = self.cfg["sigma"]
        # the segment threshold sqrt(alpha) needs alpha > 0; decoupled runs use 1e-3
        return estimate_sigma(self.fiber_cert, self.system.alpha or 1e-3, s["trials"],
                              s["orbit_length"], self.seed)

    @cached_property
    def constants(self):
        """Constants at the configured alpha, or None for the decoupled system."""
        f = self.sigma_fit
        if self.system.alpha == 0.0:
            return None
        return compute_constants(self.system.alpha, f.sigma,
                                 delta_star=f.delta_star, C_star=f.C_star)

    def derived(self) -> dict:
        m, k, s = self.model, self.constants, self.system
        out = {"lambda_a": m.lambda_a, "m0": m.m0, "m1": m.m1, "lambda_g": m.lambda_g,
               "alpha_max": s.alpha_max, "sigma": self.sigma_fit.sigma, "a": m.a, "b": s.b}
        for key in ("M_alpha", "N_alpha", "eta", "r0"):
            out[key] = None if k is None else getattr(k, key)
        return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_find_param(ctx: Context, out: Output):
    out.json("certificate.json", {"base": ctx.base_cert.to_dict(), "fiber": ctx.fiber_cert.to_dict()})


def cmd_build_coords(ctx: Context, out: Output):
    cfg = ctx.cfg["coords"]
    m = ctx.model
    rows = []
    checks = []
    for n in range(cfg["max_level"] + 1):
        q = markov_partition(m, n)
        checks.append({"level": n, "elements": q.n_elements, "nested": q.nested, "markov": q.markov})
        rows.extend((n, i, lo, hi) for i, (lo, hi) in enumerate(q.elements))
    out.csv("partitions.csv", ["level", "index", "left", "right"], rows)
    rep = distortion_report(m, cfg["distortion_level"], cfg["distortion_samples"],
                            generator(ctx.seed, 0, "distortion"))
    exact, steps = check_topological_exactness(m)
    out.json("model.json", {
        **m.summary(), "certificate": ctx.base_cert.to_dict(),
        "partitions": checks, "topologically_exact": exact, "exactness_steps": steps,
        "distortion": {"level": rep.level, "C_d": rep.C_d, "worst_left": rep.worst_left,
                       "worst_right": rep.worst_right, "samples": rep.n_samples,
                       "satisfied": rep.satisfied()},
    })


def cmd_lyapunov(ctx: Context, out: Output):
    cfg = ctx.cfg["lyapunov"]
    s = ctx.system
    res = lyapunov_exponents(s, cfg["orbits"], cfg["length"], cfg["burn_in"], ctx.seed,
                             ctx.workers, dfinv=True)
    out.csv("orbits.csv", ["orbit", "lambda_theta", "lambda_y", "dfinv", "n", "seed"],
            ((o, lt, ly, d, n, sd) for (o, lt, ly, n, sd), d in zip(res.rows(), res.dfinv)))
    summary = dict(res.stats)
    summary["lambda_theta_expected"] = ctx.model.m1 * math.log(ctx.model.lambda_a)
    summary["all_positive"] = bool(np.all(res.lambda_y > 0))
    summary["sigma_fit"] = vars(ctx.sigma_fit)
    if ctx.constants is not None:
        summary["bounds"] = vertical_exponent_vs_bound(s, res, ctx.constants)
    out.json("summary.json", summary)


def _central_word(model):
    b = markov_partition(model, 1, "P").breakpoints
    return int(np.argmin(np.abs(b))) - 1


def _even_probe(system):
    # phi = Q_a^{m1} as a polynomial in x: even, so the central siblings coincide
    p = np.array([0.0, 1.0])
    for _ in range(system.base.m1):
        p = npoly.polysub([system.base.a], npoly.polymul(p, p))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_system(system.base, system.fiber, system.alpha, p)


def curve_experiment(system, cfg: dict, seed: int) -> dict:
    """Non-flatness, linear approximation, recurrence and separation over a range of alpha."""
    rng = generator(seed, 0, "curves")
    depths = rng.integers(cfg["min_depth"], cfg["max_depth"] + 1, cfg["count"])
    words = [random_words(system, int(d), 1, rng)[0] for d in depths]
    y0s = rng.uniform(-0.5 * system.R, 0.5 * system.R, cfg["count"])
    lin_words = random_words(system, cfg["linear_depth"], cfg["linear_count"], rng)
    central = _central_word(system.base)
    out = {"alphas": list(cfg["alphas"]), "per_alpha": [], "curves": None}
    l0 = None
    for k, al in enumerate(cfg["alphas"]):
        S = system.with_alpha(al)
        cs = [evolve_horizontal(S, y, len(w), [w])[0] for y, w in zip(y0s, words)]
        rep = check_nonflat(cs, cfg["l_max"], fixed_l0=l0)
        l0 = rep.l0 if l0 is None else l0
        depth1 = max(check_linear_approx(X)[0] for X in evolve_horizontal(S, 0.0, 1))
        chains = [evolve_horizontal(S, 0.3 * system.R, len(w), [w])[0] for w in lin_words]
        ratios = [check_linear_approx(X)[0] / al ** 2 for X in chains]
        rec = np.array([curve_recurrence(X, cfg["recurrence_eps"], S.base.length) for X in cs])
        seed_curve = evolve_horizontal(S, 0.3 * system.R, 1, [[central]])[0]
        sep = separation_test(S, seed_curve, cfg["separation_depth"])
        try:
            separation_test(_even_probe(S), horizontal(S, 0.3 * system.R, 0), central_only=True)
            even = {"no_separation": False, "best": None}
        except NoSeparation as exc:
            even = {"no_separation": True, "best": exc.best}
        out["per_alpha"].append({
            "alpha": al, "nonflat": rep.to_dict(), "linear_depth1": depth1,
            "linear_ratios": ratios, "recurrence_max": rec.max(axis=0).tolist(),
            "recurrence_bound": [e ** (1.0 / (2 * l0)) for e in cfg["recurrence_eps"]],
            "separation_odd": sep.to_dict(), "separation_even": even,
        })
        if k == 0:
            out["curves"] = cs
    return out


def cmd_curves(ctx: Context, out: Output):
    cfg = ctx.cfg["curves"]
    res = curve_experiment(ctx.system, cfg, ctx.seed)
    cs = res.pop("curves")
    out.csv("curves.csv", ["curve", "depth", "word", "y0", "left", "right", "degree", "residual"],
            ((i, X.depth, "-".join(map(str, X.word)), X.y0, X.domain[0], X.domain[1],
              X.degree, X.residual) for i, X in enumerate(cs)))
    rows = []
    for i, X in enumerate(cs):
        th = np.linspace(X.domain[0], X.domain[1], 33)
        rows.extend((i, t, v) for t, v in zip(th, X(th)))
    out.csv("curve_samples.csv", ["curve", "theta", "value"], rows)
    B = [p["nonflat"]["B_hat"] for p in res["per_alpha"]]
    A = [p["nonflat"]["A_hat"] for p in res["per_alpha"]]
    e0 = [p["separation_odd"]["eps0_hat"] for p in res["per_alpha"]]
    res["spread"] = {"B": max(B) / min(B) - 1 if min(B) > 0 else math.inf,
                     "A": max(A) / min(A) - 1 if min(A) > 0 else math.inf,
                     "eps0": max(e0) / min(e0) - 1 if min(e0) > 0 else math.inf}
    out.json("nonflat.json", res)


def measure_experiment(system, cfg: dict, seed: int) -> dict:
    u = build_ulam(system, cfg["n_theta"], cfg["n_y"], cfg["samples"], seed)
    tm = u.theta_marginal()
    cdf_dev = float(np.max(np.abs(np.cumsum(tm) - np.arange(1, u.n_theta + 1) / u.n_theta)))
    _, bd = base_ulam(system.base, u.n_theta, seed=seed)
    diag = {
        "residual": u.residual, "steps": u.steps, "converged": u.converged,
        "column_sum_deviation": float(np.max(np.abs(u.column_sums() - 1))),
        "theta_marginal_cdf_deviation_cells": cdf_dev * u.n_theta,
        "theta_marginal_vs_base_l1": float(np.abs(tm - bd).sum()),
        "uniqueness_l1": uniqueness_diagnostic(u, cfg["starts"], seed),
    }
    att = {}
    prev = None
    for n in cfg["attractor_levels"]:
        A = attractor(system, n, u.n_theta, u.n_y)
        att[str(n)] = {"cells": A.count,
                       "nested": None if prev is None else bool(not np.any(A.cells & ~prev.cells)),
                       "difference": None if prev is None else A.difference(prev)}
        prev = A
    diag["attractor"] = att
    return {"ulam": u, "diagnostics": diag}


def cmd_measure(ctx: Context, out: Output):
    res = measure_experiment(ctx.system, ctx.cfg["measure"], ctx.seed)
    u = res["ulam"]
    mass = u.mass
    it, iy = np.nonzero(mass > 0)
    out.csv("density.csv", ["theta_index", "y_index", "mass"],
            zip(it.tolist(), iy.tolist(), mass[it, iy]))
    out.json("diagnostics.json", res["diagnostics"])


def cmd_recurrence(ctx: Context, out: Output):
    cfg = ctx.cfg["recurrence"]
    s, K = ctx.system, ctx.constants
    if K is None:
        raise ConfigError("[coupling] alpha: recurrence experiments need alpha > 0",
                          key="[coupling] alpha", admissible=f"number in (0, {s.alpha_max:g}]")
    rs = slow_recurrence(s, cfg["orbits"], cfg["n_list"], cfg["epsilon"], K.eta,
                         cfg["delta_tilde"], ctx.seed)
    out.csv("tail.csv", ["n", "epsilon", "fraction"], rs.tail_rows())
    r = np.linspace(K.r0, K.r0 + cfg["r_span"], cfg["r_points"])
    Y = crossing_curve(s, K.M_alpha)
    crit = critical_return_test(s, Y, K.M_alpha, r, cfg["theta_samples"], ctx.seed)
    out.csv("critical.csv", ["r", "fraction"], zip(crit["r"], crit["fractions"]))
    delta = recurrence_delta(s.alpha, K.eta, cfg["delta_tilde"])
    kern, again, _ = dump_and_recompute(s, 0.1, 0.3, max(cfg["n_list"]), delta, cfg["n_list"])
    fr = rs.fractions
    out.json("fit.json", {
        "slow_recurrence": rs.to_dict(),
        "strictly_decreasing": bool(np.all(np.diff(fr) < 0)),
        "critical_return": crit,
        "dump_recompute_identical": bool(np.array_equal(kern, again)),
    })


HANDLERS = {
    "find-param": cmd_find_param,
    "build-coords": cmd_build_coords,
    "lyapunov": cmd_lyapunov,
    "curves": cmd_curves,
    "measure": cmd_measure,
    "recurrence": cmd_recurrence,
}


def run_command(name: str, cfg: ExperimentConfig, ctx: Context | None = None) -> dict:
    """Run one subcommand and return its manifest."""
    ctx = Context(cfg) if ctx is None else ctx
    out = Output(Path(cfg.get("run", "out")), name)
    t0 = time.perf_counter()
    HANDLERS[name](ctx, out)
    derived = ({"base_c": ctx.base_cert.c, "fiber_c": ctx.fiber_cert.c}
               if name == "find-param" else ctx.derived())
    return out.finish(cfg, derived, time.perf_counter() - t0)


def verify(root) -> dict:
    """Recompute every checksum listed in the manifests under ``root``."""
    report = {}
    manifests = sorted(Path(root).glob("*/manifest.json"))
    if not manifests:
        raise MTSkewError(f"no manifests under {root}")
    for mf in manifests:
        m = json.loads(mf.read_text(encoding="utf-8"))
        bad = [f for f, h in m["files"].items()
               if not (mf.parent / f).exists() or sha256(mf.parent / f) != h]
        report[m["command"]] = {"files": len(m["files"]), "mismatched": bad}
    return report


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"command line: {message}", key="argv")


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mtskew", description="Skew products over Misiurewicz-Thurston quadratic maps.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS + ("all", "verify"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--preset", default="default", help="default or quick")
        sp.add_argument("--seed", type=int, help="global 64-bit seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--workers", type=int, help="worker threads")
    return p


def _error(exc, code, out_dir=None):
    payload = {"exit_code": code, **(exc.to_dict() if isinstance(exc, MTSkewError)
                                     else {"error": type(exc).__name__, "message": str(exc)})}
    text = _dumps(payload)
    sys.stderr.write(text)
    if out_dir is not None:
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            (Path(out_dir) / "error.json").write_text(text, encoding="utf-8")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    out_dir = None
    try:
        args = make_parser().parse_args(argv)
        if args.command != "verify" and args.out is not None:
            out_dir = Path(args.out) / args.command
        cfg = load_config(args.config, args.preset)
        for key in ("seed", "out", "workers"):
            val = getattr(args, key)
            if val is not None:
                cfg.set("run", key, val)
        out_dir = Path(cfg.get("run", "out")) / args.command
        if args.command == "verify":
            report = verify(cfg.get("run", "out"))
            sys.stdout.write(_dumps(report))
            return 0 if all(not r["mismatched"] for r in report.values()) else 2
        names = COMMANDS if args.command == "all" else (args.command,)
        ctx = Context(cfg)
        for name in names:
            out_dir = Path(cfg.get("run", "out")) / name
            m = run_command(name, cfg, ctx)
            sys.stdout.write(f"{name}: {len(m['files'])} files -> {out_dir}\n")
        return 0
    except ConfigError as exc:
        return _error(exc, 1, out_dir)
    except MTSkewError as exc:
        return _error(exc, 2, out_dir)
    except Exception as exc:  # any other failure is a runtime error with exit code 2
        return _error(exc, 2, out_dir)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
