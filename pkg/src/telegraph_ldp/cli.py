"""``telegraph-ldp`` command-line runner.

Every command writes its data files plus a JSON manifest recording the fully
resolved configuration, the package version and the sha256 of each output.
``telegraph-ldp replay --manifest FILE`` reruns a manifest and compares hashes.

Exit codes: 0 success, 1 replay mismatch, 2 domain error, 3 numeric or solver
error, 4 capacity error, 64 usage error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__, action, bounds, kernels, rare_event, rates, sde, telegraph
from .errors import CapacityError, DomainError, NumericError
from .grids import GridPath, uniform_grid
from .rng import RngSeed

EXIT_OK, EXIT_MISMATCH, EXIT_DOMAIN, EXIT_NUMERIC, EXIT_CAPACITY, EXIT_USAGE = 0, 1, 2, 3, 4, 64
OUTPUT_ENV = "TELEGRAPH_LDP_OUTPUT_DIR"


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    return [float(x) for x in str(text).split(",") if x.strip()]


# ---------------------------------------------------------------------------
# option tables: (flag, type, default, help)

GLOBAL = [
    ("seed", int, 0, "base seed of the Philox substreams"),
    ("stream", int, 0, "base stream index"),
    ("threads", int, 1, "worker threads (never changes results)"),
    ("format", str, "csv", "primary data format: csv or json"),
]
COEFFS = [
    ("drift", str, "const:0", "drift b: const:c, linear:k, affine:a,b, sin:k, cos:k, tanh:k"),
    ("diffusion", str, "const:1", "diffusion sigma, same forms as --drift"),
    ("lambda-form", str, "kappa:1", "noise intensity: kappa:K (K eps) or power:B (eps**B)"),
    ("x0", float, 0.0, "initial value"),
]
PROCESS = [
    ("process", str, "theta", "observed process: theta, gaussian or sde"),
    ("kernel", str, "brownian", "kernel: brownian, fbm:H or ou:C,lambda"),
    *COEFFS,
    ("event", str, "endpoint", "event kind: endpoint or ball"),
    ("t", float, 1.0, "event time of an endpoint event"),
    ("threshold", float, 0.5, "endpoint threshold (strict exceedance)"),
    ("target", str, "linear:0.3", "ball centre: linear:a, ou_example:a, sin:a or file:PATH"),
    ("grid", int, 20, "grid intervals of the ball centre"),
    ("radius", float, 0.1, "ball radius"),
    ("complementary", bool, False, "use the complement of the ball"),
    ("sampler", str, "auto", "auto (mean-shift tilt where it applies) or plain"),
    ("initial", str, "plus", "initial law of xi: plus, minus or stationary"),
]

COMMANDS: dict[tuple[str, str], list] = {
    ("simulate", "telegraph"): [
        ("epsilon", float, 0.1, "noise scale"),
        ("horizon", float, 1.0, "time horizon"),
        ("initial", str, "plus", "initial law: plus, minus or stationary"),
    ],
    ("simulate", "gaussian"): [
        ("epsilon", float, 0.1, "noise scale"),
        ("kernel", str, "brownian", "kernel: brownian, fbm:H or ou:C,lambda"),
        ("grid", int, 200, "output grid intervals"),
        ("initial", str, "plus", "initial law"),
    ],
    ("simulate", "sde"): [
        ("epsilon", float, 0.1, "noise scale"),
        *COEFFS,
        ("grid", int, 200, "output grid intervals"),
        ("initial", str, "plus", "initial law"),
        ("tol-ode", float, sde.TOL_ODE, "ODE tolerance"),
        ("diagnostics", bool, False, "add the Ito decomposition columns"),
    ],
    ("rate", "eval"): [
        ("lambda-star", float, None, "evaluate the local cost at x"),
        ("cgf", float, None, "evaluate the limit cumulant generating function at alpha"),
        ("finite-cgf", float, None, "evaluate the finite-horizon cgf at alpha (needs --T)"),
        ("T", float, 100.0, "horizon of --finite-cgf"),
        ("initial", str, "stationary", "initial law of --finite-cgf"),
        ("gamma", float, None, "evaluate the regime cost at x"),
        ("regime", str, "kappa:1", "regime of --gamma: kappa:K, gaussian or unit"),
    ],
    ("rate", "action"): [
        ("model", str, "kernel", "kernel, path or sde"),
        ("kernel", str, "brownian", "kernel: brownian, fbm:H or ou:C,lambda"),
        *COEFFS,
        ("target", str, "linear:0.3", "target: linear:a, ou_example:a, sin:a or file:PATH"),
        ("grid", int, 20, "grid intervals of the target"),
    ],
    ("mc", "estimate"): [*PROCESS, ("epsilon", float, 0.3, "noise scale"), ("n", int, 100_000, "samples")],
    ("mc", "curve"): [
        *PROCESS,
        ("epsilons", _floats, "0.35,0.3,0.25,0.2", "decreasing noise scales"),
        ("n", int, 100_000, "samples per epsilon"),
    ],
    ("mc", "phase"): [
        ("kappa", _floats, "1", "kappa values (lambda = kappa eps)"),
        ("beta", _floats, "0.5", "beta values (lambda = eps**beta)"),
        ("threshold", float, 0.5, "endpoint threshold at t = 1"),
        ("epsilons", _floats, "0.35,0.3,0.25,0.2", "decreasing noise scales"),
        ("n", int, 100_000, "samples per epsilon"),
        ("initial", str, "plus", "initial law"),
        ("rel-tol", float, 0.25, "relative tolerance of the pass/fail verdict"),
    ],
    ("bounds", "verify"): [
        ("epsilons", _floats, "0.5,0.35,0.25", "noise scales"),
        ("levels", _floats, "0.25,0.5,1.0", "levels a"),
        ("n", int, 100_000, "paths per epsilon"),
        ("kappa", float, 1.0, "lambda = kappa eps"),
        ("rho", float, 1.0, "bound on |gamma|"),
        ("one-sided", bool, False, "verify the one-sided event against the plain bound"),
        ("fuzz-n", int, 1_000_000, "elementary inequality fuzz cases"),
    ],
    ("kernel", "selftest"): [
        ("kernels", str, "brownian;ou:1,1;fbm:0.25;fbm:0.75", "semicolon-separated kernels"),
        ("n", int, 20, "grid points of the modulus fit"),
        ("max-gap", float, kernels.H2_MAX_GAP, "largest gap used in the modulus fit"),
    ],
}

# `action solve` is the same solver under the name used for its JSON output
COMMANDS[("action", "solve")] = COMMANDS[("rate", "action")]


def _dest(flag: str) -> str:
    return flag.replace("-", "_")


def _defaults(key: tuple[str, str]) -> dict:
    out = {}
    for flag, typ, default, _ in GLOBAL + COMMANDS[key]:
        out[_dest(flag)] = typ(default) if callable(typ) and isinstance(default, str) and typ is not str else default
    return out


def _coerce(key: tuple[str, str], name: str, value):
    for flag, typ, _, _ in GLOBAL + COMMANDS[key]:
        if _dest(flag) == name:
            if value is None or typ is bool:
                return value if typ is not bool else bool(value)
            if typ is _floats:
                return value if isinstance(value, list) else _floats(value)
            return typ(value)
    raise UsageError(f"unknown config key {name!r}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="telegraph-ldp", description="Telegraph-noise large deviations toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    groups = parser.add_subparsers(dest="group", metavar="{simulate,rate,action,mc,bounds,kernel,replay}")
    groups.required = True
    subs: dict[str, Any] = {}
    for (group, cmd), opts in COMMANDS.items():
        if group not in subs:
            gp = groups.add_parser(group)
            subs[group] = gp.add_subparsers(dest="command")
            subs[group].required = True
        p = subs[group].add_parser(cmd)
        for flag, typ, default, help_ in GLOBAL + opts:
            kw = {"dest": _dest(flag), "default": argparse.SUPPRESS, "help": f"{help_} (default {default})"}
            if typ is bool:
                p.add_argument(f"--{flag}", action="store_true", **kw)
            else:
                p.add_argument(f"--{flag}", type=typ, **kw)
        p.add_argument("--config", default=None, help="JSON file of flat option keys")
        p.add_argument("--output-dir", default=None, help=f"output directory (env {OUTPUT_ENV}, default .)")
    rp = groups.add_parser("replay")
    rp.add_argument("--manifest", required=True)
    rp.add_argument("--output-dir", default=None)
    rp.add_argument("--threads", type=int, default=None)
    return parser


def resolve_config(key: tuple[str, str], explicit: dict, config_path: str | None) -> dict:
    """Built-in defaults, then the config file, then explicit flags."""
    cfg = _defaults(key)
    if config_path:
        with open(config_path) as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        for name, value in loaded.items():
            cfg[_dest(name)] = _coerce(key, _dest(name), value)
    cfg.update(explicit)
    if cfg["format"] not in ("csv", "json"):
        raise DomainError("format must be csv or json")
    if cfg["threads"] < 1:
        raise DomainError("threads must be at least 1")
    return cfg


# ---------------------------------------------------------------------------
# spec parsers


def _split(text: str) -> tuple[str, list[float]]:
    name, _, rest = text.partition(":")
    try:
        return name.strip(), _floats(rest)
    except ValueError as exc:
        raise DomainError(f"cannot parse {text!r}") from exc


def parse_coefficient(text: str) -> tuple[Callable[[float], float], float, float | None]:
    """``(function, Lipschitz constant, constant value or None)``."""
    name, args = _split(text)
    forms = {
        "const": (1, lambda c: (lambda z: c, 0.0, c)),
        "linear": (1, lambda k: (lambda z: k * z, abs(k), None)),
        "affine": (2, lambda a, b: (lambda z: a + b * z, abs(b), None)),
        "sin": (1, lambda k: (lambda z: k * math.sin(z), abs(k), None)),
        "cos": (1, lambda k: (lambda z: k * math.cos(z), abs(k), None)),
        "tanh": (1, lambda k: (lambda z: k * math.tanh(z), abs(k), None)),
    }
    if name not in forms or len(args) != forms[name][0]:
        raise DomainError(f"unknown coefficient {text!r}")
    return forms[name][1](*args)


def parse_drift_diffusion(cfg: dict) -> sde.DriftDiffusion:
    b, lb, cb = parse_coefficient(cfg["drift"])
    s, ls, cs = parse_coefficient(cfg["diffusion"])
    if cb is not None and cs is not None:
        return sde.DriftDiffusion.constant(cb, cs)
    return sde.DriftDiffusion(b, s, lipschitz_hint=lb + ls)


def parse_lambda(text: str) -> sde.LambdaSpec:
    name, args = _split(text)
    if name == "kappa" and len(args) == 1:
        return sde.LambdaSpec.kappa_eps(args[0])
    if name == "power" and len(args) == 1:
        return sde.LambdaSpec.power(args[0])
    raise DomainError(f"unknown lambda form {text!r}")


def parse_kernel(text: str) -> kernels.KernelSpec:
    name, args = _split(text)
    if name == "brownian" and not args:
        return kernels.KernelSpec.brownian()
    if name == "fbm" and len(args) == 1:
        return kernels.KernelSpec.fbm(args[0])
    if name == "ou" and len(args) == 2:
        return kernels.KernelSpec.ou(*args)
    raise DomainError(f"unknown kernel {text!r}")


def parse_regime(text: str) -> rates.RateModel:
    name, args = _split(text)
    if name == "kappa" and len(args) == 1:
        return rates.RateModel.kappa_regime(args[0])
    if name == "gaussian":
        return rates.RateModel.gaussian()
    if name == "unit":
        return rates.RateModel.unit_path()
    raise DomainError(f"unknown regime {text!r}")


def parse_target(text: str, n: int, shift: float = 0.0) -> GridPath:
    if text.startswith("file:"):
        values = np.loadtxt(text[5:], dtype=float, ndmin=1)
        return GridPath(values)
    name, args = _split(text)
    if len(args) != 1:
        raise DomainError(f"unknown target {text!r}")
    a = args[0]
    forms = {
        "linear": lambda t: a * t,
        "ou_example": lambda t: a * (1.0 - math.exp(-t)),
        "sin": lambda t: a * math.sin(math.pi * t),
    }
    if name not in forms:
        raise DomainError(f"unknown target {text!r}")
    return GridPath.from_function(lambda t: shift + forms[name](t), n)


def _seed(cfg: dict) -> RngSeed:
    return RngSeed(cfg["seed"], cfg["stream"])


def _initial(cfg: dict) -> str:
    if cfg["initial"] not in ("plus", "minus", "stationary"):
        raise DomainError("initial must be plus, minus or stationary")
    return cfg["initial"]


# ---------------------------------------------------------------------------
# output helpers


def _jsonable(obj):
    """Replace non-finite floats by strings so the output is strict JSON."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if v is None:
        return ""
    return str(v)


def csv_text(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row.get(c)) for c in columns])
    return buf.getvalue()


class Run:
    """Collects output files of one command, then writes them with a manifest."""

    def __init__(self, key: tuple[str, str], cfg: dict, out_dir: Path):
        self.key, self.cfg, self.out_dir = key, cfg, out_dir
        self.files: dict[str, str] = {}
        self.extra: dict = {}

    @property
    def stem(self) -> str:
        return "_".join(self.key)

    def add(self, suffix: str, text: str) -> None:
        self.files[f"{self.stem}{suffix}"] = text

    def add_table(self, rows: list[dict], columns: list[str], report: dict | None = None) -> None:
        if self.cfg["format"] == "csv":
            self.add(".csv", csv_text(rows, columns))
            if report is not None:
                self.add(".json", dumps(report))
        else:
            self.add(".json", dumps(report if report is not None else {"rows": rows}))

    def write(self) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        hashes = {}
        for name, text in self.files.items():
            data = text.encode()
            (self.out_dir / name).write_bytes(data)
            hashes[name] = hashlib.sha256(data).hexdigest()
        manifest = {
            "tool": "telegraph-ldp",
            "version": __version__,
            "command": list(self.key),
            "config": self.cfg,
            "outputs": hashes,
            **self.extra,
        }
        path = self.out_dir / f"{self.stem}_manifest.json"
        path.write_text(dumps(manifest))
        return path


# ---------------------------------------------------------------------------
# commands


def cmd_simulate_telegraph(cfg: dict, run: Run) -> None:
    path = telegraph.sample_path(cfg["epsilon"], cfg["horizon"], _seed(cfg), _initial(cfg))
    if cfg["format"] == "csv":
        run.add(".csv", path.to_csv())
    else:
        run.add(".json", dumps({"epsilon": path.epsilon, "horizon": path.horizon,
                                "initial_sign": path.initial_sign, "jump_times": path.jump_times}))
    print(f"{path.n_jumps} jumps on [0, {path.horizon:g}]")


def cmd_simulate_gaussian(cfg: dict, run: Run) -> None:
    spec = parse_kernel(cfg["kernel"])
    eps = cfg["epsilon"]
    path = telegraph.sample_path(eps, 1.0, _seed(cfg), _initial(cfg))
    grid = uniform_grid(cfg["grid"])
    g = eps * kernels.g_epsilon(spec, path, grid)
    run.add_table([{"t": t, "eps_g": v} for t, v in zip(grid, g)], ["t", "eps_g"],
                  None if cfg["format"] == "csv" else {"t": grid, "eps_g": g, "kernel": spec.describe()})
    print(f"eps*G_eps(1) = {g[-1]:.7g}")


def cmd_simulate_sde(cfg: dict, run: Run) -> None:
    dd = parse_drift_diffusion(cfg)
    lam = parse_lambda(cfg["lambda_form"])
    eps = cfg["epsilon"]
    path = telegraph.sample_path(eps, 1.0, _seed(cfg), _initial(cfg))
    grid = uniform_grid(cfg["grid"])
    lipschitz_ok = dd.check_lipschitz()
    if cfg["diagnostics"]:
        diag = sde.martingale_diagnostics(dd, cfg["x0"], eps, lam, path, grid, cfg["tol_ode"])
        rows = [
            {"t": t, "x": x, "drift": d, "martingale": m, "stieltjes": s, "residual": r}
            for t, x, d, m, s, r in zip(grid, diag.x, diag.drift, diag.martingale, diag.stieltjes, diag.residual)
        ]
        cols = ["t", "x", "drift", "martingale", "stieltjes", "residual"]
        x = diag.x
    else:
        x = sde.simulate(dd, cfg["x0"], eps, lam, path, grid, cfg["tol_ode"])
        rows = [{"t": t, "x": v} for t, v in zip(grid, x)]
        cols = ["t", "x"]
    run.add_table(rows, cols, None if cfg["format"] == "csv" else {"rows": rows})
    run.extra["lipschitz_check"] = lipschitz_ok
    if lipschitz_ok is not True:
        run.extra["warning"] = "global Lipschitz spot-check failed or was not possible"
    print(f"X(1) = {x[-1]:.7g}")


def cmd_rate_eval(cfg: dict, run: Run) -> None:
    out = {}
    if cfg["lambda_star"] is not None:
        out["lambda_star"] = rates.lambda_star(cfg["lambda_star"])
    if cfg["cgf"] is not None:
        out["cgf"] = rates.lambda_cgf(cfg["cgf"])
    if cfg["finite_cgf"] is not None:
        init = cfg["initial"]
        if init not in ("plus", "stationary"):
            raise DomainError("finite cgf needs initial plus or stationary")
        out["finite_cgf"] = rates.finite_eps_cgf(cfg["finite_cgf"], cfg["T"], init)
    if cfg["gamma"] is not None:
        out["gamma"] = rates.gamma_cost(parse_regime(cfg["regime"]), cfg["gamma"])
    if not out:
        raise UsageError("rate eval needs at least one of --lambda-star, --cgf, --finite-cgf, --gamma")
    run.add(".json", dumps(out))
    if len(out) == 1:
        print(f"{next(iter(out.values())):.7g}")
    else:
        for k, v in out.items():
            print(f"{k} {v:.7g}")


def cmd_rate_action(cfg: dict, run: Run) -> None:
    model = cfg["model"]
    if model == "kernel":
        spec = parse_kernel(cfg["kernel"])
        target = parse_target(cfg["target"], cfg["grid"])
        res = action.kernel_rate(spec, target)
        report = {"model": "kernel", "kernel": spec.describe(), **res.to_dict()}
    elif model == "path":
        target = parse_target(cfg["target"], cfg["grid"])
        report = {"model": "path", "value": action.path_rate(target)}
    elif model == "sde":
        dd = parse_drift_diffusion(cfg)
        lam = parse_lambda(cfg["lambda_form"])
        rm = lam.rate_model()
        target = parse_target(cfg["target"], cfg["grid"], shift=cfg["x0"])
        report = {"model": "sde", "regime": rm.to_dict(),
                  "value": action.sde_rate(dd.b, dd.sigma, cfg["x0"], target, rm)}
    else:
        raise DomainError("model must be kernel, path or sde")
    report["target"] = {"spec": cfg["target"], "values": target.values}
    run.add(".json", dumps(report))
    print(f"{report['value']:.7g}")


def _event(cfg: dict) -> rare_event.EventSpec:
    kind = cfg["process"]
    if kind == "theta":
        proc = rare_event.Process.theta_integral()
    elif kind == "gaussian":
        proc = rare_event.Process.g_eps(parse_kernel(cfg["kernel"]))
    elif kind == "sde":
        proc = rare_event.Process.sde(parse_drift_diffusion(cfg), cfg["x0"], parse_lambda(cfg["lambda_form"]))
    else:
        raise DomainError("process must be theta, gaussian or sde")
    if cfg["event"] == "endpoint":
        return rare_event.EventSpec.endpoint(proc, cfg["t"], cfg["threshold"])
    if cfg["event"] == "ball":
        shift = cfg["x0"] if kind == "sde" else 0.0
        target = parse_target(cfg["target"], cfg["grid"], shift=shift)
        return rare_event.EventSpec.ball(proc, target, cfg["radius"], cfg["complementary"])
    raise DomainError("event must be endpoint or ball")


ESTIMATE_COLUMNS = ["epsilon", "n_samples", "n_hits", "p_hat", "ci_low", "ci_high", "speed",
                    "scaled_log_p", "rate_reference", "sampler", "a_plus", "a_minus"]


def _sampler(cfg: dict) -> str:
    if cfg["sampler"] not in ("auto", "plain"):
        raise DomainError("sampler must be auto or plain")
    return cfg["sampler"]


def cmd_mc_estimate(cfg: dict, run: Run) -> None:
    event = _event(cfg)
    est = rare_event.estimate(event, cfg["epsilon"], cfg["n"], _seed(cfg), _sampler(cfg),
                              _initial(cfg), threads=cfg["threads"])
    bound = event.chernoff_bound(cfg["epsilon"], _initial(cfg))
    row = est.to_row()
    run.add_table([row], ESTIMATE_COLUMNS, {"event": event.describe(), "estimate": row, "chernoff_bound": bound})
    print(f"p_hat = {est.p_hat:.7g}  scaled_log_p = {est.scaled_log_p:.7g}  rate_reference = {est.rate_reference:.7g}")


def cmd_mc_curve(cfg: dict, run: Run) -> None:
    event = _event(cfg)
    curve = rare_event.ldp_curve(event, cfg["epsilons"], cfg["n"], _seed(cfg), _sampler(cfg),
                                 _initial(cfg), threads=cfg["threads"])
    report = curve.to_dict()
    report["chernoff_violations"] = rare_event.chernoff_violations(curve)
    run.add_table([e.to_row() for e in curve.estimates], ESTIMATE_COLUMNS, report)
    reg = curve.regression
    for e in curve.estimates:
        print(f"eps={e.epsilon:<6g} scaled_log_p={e.scaled_log_p:.7g}")
    if reg is not None:
        print(f"intercept {reg.intercept:.7g} +/- {reg.intercept_se:.2g} (target {curve.target:.7g})")


def cmd_mc_phase(cfg: dict, run: Run) -> None:
    cells = rare_event.phase_transition_report(
        cfg["kappa"], cfg["beta"], cfg["threshold"], cfg["epsilons"], cfg["n"], _seed(cfg),
        cfg["rel_tol"], _initial(cfg), cfg["threads"],
    )
    rows = [c.to_row() for c in cells]
    table = [{k: v for k, v in r.items() if k != "scaled_log_p"} for r in rows]
    run.add_table(table, ["regime", "parameter", "target", "intercept", "intercept_se", "passed"],
                  {"cells": rows, "curves": [c.curve.to_dict() for c in cells]})
    for r in rows:
        print(f"{r['regime']:<9} {r['parameter']:<6g} target {r['target']:<11.7g} "
              f"intercept {r['intercept']:<11.7g} {'pass' if r['passed'] else 'FAIL'}")


def cmd_bounds_verify(cfg: dict, run: Run) -> None:
    cells = bounds.verify_exponential_inequality(
        cfg["epsilons"], cfg["levels"], cfg["n"], _seed(cfg), cfg["rho"], cfg["kappa"], not cfg["one_sided"],
    )
    fuzz = bounds.elementary_inequality_fuzz(cfg["fuzz_n"], _seed(cfg).substream(1 << 48))
    report = {"cells": [c.to_dict() for c in cells], "elementary_fuzz": fuzz.to_dict(),
              "all_passed": all(c.passed for c in cells) and fuzz.violations == 0}
    run.add(".json", dumps(report))
    for c in cells:
        print(f"eps={c.epsilon:<5g} a={c.a:<5g} freq={c.frequency:<9.4g} bound={c.bound:<9.4g} "
              f"{'pass' if c.passed else 'FAIL'}")
    print(f"elementary inequality: {fuzz.cases} cases, {fuzz.violations} violations")


def cmd_kernel_selftest(cfg: dict, run: Run) -> None:
    specs = [parse_kernel(k) for k in cfg["kernels"].split(";") if k.strip()]
    report = kernels.selftest_report(specs, cfg["n"], cfg["max_gap"])
    for spec, row in zip(specs, report["kernels"]):
        if spec.family == "fbm":
            H = spec.params["H"]
            row["variance_identity_error"] = abs(kernels.fbm_variance(H, 1.0) - 1.0)
    run.add(".json", dumps(report))
    for row in report["kernels"]:
        print(f"{row['family']:<9} h1 {row['h1_max_violation']:.1e}  h2 exponent "
              f"{row['h2_fitted_exponent']:.4f} (expected {row['h2_expected_exponent']:g})")


HANDLERS = {
    ("simulate", "telegraph"): cmd_simulate_telegraph,
    ("simulate", "gaussian"): cmd_simulate_gaussian,
    ("simulate", "sde"): cmd_simulate_sde,
    ("rate", "eval"): cmd_rate_eval,
    ("rate", "action"): cmd_rate_action,
    ("action", "solve"): cmd_rate_action,
    ("mc", "estimate"): cmd_mc_estimate,
    ("mc", "curve"): cmd_mc_curve,
    ("mc", "phase"): cmd_mc_phase,
    ("bounds", "verify"): cmd_bounds_verify,
    ("kernel", "selftest"): cmd_kernel_selftest,
}


def _out_dir(given: str | None) -> Path:
    return Path(given or os.environ.get(OUTPUT_ENV) or ".")


def execute(key: tuple[str, str], cfg: dict, out_dir: Path) -> Path:
    run = Run(key, cfg, out_dir)
    HANDLERS[key](cfg, run)
    return run.write()


def replay(manifest_path: str, out_dir: str | None, threads: int | None) -> int:
    manifest = json.loads(Path(manifest_path).read_text())
    key = tuple(manifest["command"])
    if key not in HANDLERS:
        raise DomainError(f"manifest names unknown command {key}")
    cfg = _defaults(key)
    cfg.update({k: _coerce(key, k, v) for k, v in manifest["config"].items()})
    if threads is not None:
        cfg["threads"] = threads
    target = Path(out_dir) if out_dir else Path(manifest_path).parent / "replay"
    new = json.loads(execute(key, cfg, target).read_text())["outputs"]
    mismatched = [name for name, h in manifest["outputs"].items() if new.get(name) != h]
    if mismatched:
        print("mismatch: " + ", ".join(mismatched))
        return EXIT_MISMATCH
    print(f"identical: {len(new)} output(s) reproduced in {target}")
    return EXIT_OK


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.group == "replay":
            return replay(args.manifest, _out_dir(args.output_dir) if args.output_dir else None, args.threads)
        key = (args.group, args.command)
        explicit = {k: v for k, v in vars(args).items() if k not in ("group", "command", "config", "output_dir")}
        cfg = resolve_config(key, explicit, args.config)
        execute(key, cfg, _out_dir(args.output_dir))
        return EXIT_OK
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"telegraph-ldp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DomainError as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


def main() -> None:
    sys.exit(run())
