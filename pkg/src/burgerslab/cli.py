"""Command-line entry point: verification suites, kernel export and experiments.

Reports are plain key=value text. Exit codes: 0 all checks pass, 1 a check
failed, 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
THREADS_ENV = "BURGERSLAB_THREADS"

DEFAULTS = {
    "eps": 0.01,
    "nodes": 48,
    "samples": 100,
    "seed": 0,
    "delta": 1e-3,
    "horizon": 1e-2,
    "eta": 1.0,
    "iters": 500,
    "seeds": 20,
    "tol_roundtrip": 1e-12,
    "tol_erf": 1e-8,
    "tol_generator": 1e-6,
    "tol_ibp": 1e-3,
    "k0_floor": 0.74,
    "psd_floor": -1e-10,
    "eigen_band": 0.1,
    "k1_floor": 0.0075,
    "tol_pde": 0.01,
    "tol_conservation": 1e-8,
    "tol_increment": 1e-6,
    "tol_q11": 1e-12,
    "tol_gradient": 1e-4,
    "persistence_slope": 0.45,
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, text: str):
    kind = type(DEFAULTS[key])
    try:
        value = kind(float(text)) if kind is int else kind(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r}") from exc
    if kind is int and float(text) != value:
        raise ConfigError(f"{key}: expected an integer, got {text!r}")
    return value


def _validate(cfg: dict) -> dict:
    positive = ["eps", "nodes", "samples", "horizon", "eta", "iters", "seeds"]
    for key in positive:
        if not cfg[key] > 0:
            raise ConfigError(f"{key} must be positive")
    if cfg["delta"] < 0 or cfg["seed"] < 0:
        raise ConfigError("delta and seed must be non-negative")
    if cfg["eps"] > 1:
        raise ConfigError("eps must not exceed 1")
    return cfg


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    """Defaults, then the key=value file, then explicit overrides; unknown keys rejected."""
    cfg = dict(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for lineno, line in enumerate(lines, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            cfg[key] = _coerce(key, value)
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value
    return _validate(cfg)


# ---------------------------------------------------------------------------
# reports


@dataclass
class Check:
    anchor: str
    metric: str
    value: float
    threshold: float
    relation: str  # "<" or ">="

    def __post_init__(self):
        self.value = float(self.value)
        self.threshold = float(self.threshold)

    @property
    def passed(self) -> bool:
        if not np.isfinite(self.value):
            return False
        if self.relation == "<":
            return self.value < self.threshold
        return self.value >= self.threshold


@dataclass
class Report:
    experiment: str
    params: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    duration: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failing(self) -> list:
        return [c for c in self.checks if not c.passed]

    def to_text(self) -> str:
        lines = [f"experiment={self.experiment}", f"duration={self.duration!r}", f"passed={self.passed}"]
        lines += [f"param.{k}={v!r}" for k, v in self.params.items()]
        lines += [f"metric.{k}={v!r}" for k, v in self.metrics.items()]
        for c in self.checks:
            base = f"check.{c.anchor}"
            lines += [
                f"{base}.metric={c.metric}",
                f"{base}.value={c.value!r}",
                f"{base}.threshold={c.threshold!r}",
                f"{base}.relation={c.relation}",
                f"{base}.pass={c.passed}",
            ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Report":
        rep = cls("")
        checks: dict = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, value = line.split("=", 1)
            if key == "experiment":
                rep.experiment = value
            elif key == "duration":
                rep.duration = float(value)
            elif key.startswith("param."):
                rep.params[key[6:]] = _literal(value)
            elif key.startswith("metric."):
                rep.metrics[key[7:]] = _literal(value)
            elif key.startswith("check."):
                anchor, attr = key[6:].rsplit(".", 1)
                checks.setdefault(anchor, {})[attr] = value
        for anchor, d in checks.items():
            rep.checks.append(Check(anchor, d["metric"], float(d["value"]), float(d["threshold"]), d["relation"]))
        return rep


def _literal(text: str):
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text.strip("'\"")


# ---------------------------------------------------------------------------
# verification suites (reduced sizes of the full acceptance checks)


def suite_spectral(cfg) -> list:
    from .spectral_core import SpaceGrid, G_images, G_sine, rho_eval, sine_analyze, sine_synthesize

    grid = SpaceGrid()
    f = rho_eval(grid.nodes)
    rt = float(np.max(np.abs(sine_synthesize(sine_analyze(f), grid) - f)))
    x = np.linspace(0.01, 0.99, 41)
    gap = max(float(np.max(np.abs(G_images(e, t, x) - G_sine(e, t, x)))) for e, t in [(0.1, 0.1), (0.01, 1.0)])
    return [
        Check("sine_roundtrip", "max_abs_error", rt, cfg["tol_roundtrip"], "<"),
        Check("heat_kernel_representations", "max_abs_gap", gap, 1e-10, "<"),
    ]


def suite_kernel(cfg) -> list:
    from scipy.integrate import quad
    from scipy.special import erf

    from .kernel_lab import erf_identity, generator_A

    rng = np.random.default_rng(cfg["seed"])
    err = 0.0
    for a, b in rng.uniform(0.1, 10, size=(5, 2)):
        ref = quad(lambda x: 1 - erf(a * x) * erf(b * x), 0, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
        err = max(err, abs(float(erf_identity(a, b)) - ref))
    gen = 0.0
    for eps in (0.1, 0.01):
        for _ in range(5):
            s1, s2 = np.sort(rng.random(2))[::-1] * 0.9
            t = s1 + (1 - s1) * rng.uniform(0.05, 1)
            total = generator_A(eps, t, s1, s2)
            parts = sum(generator_A(eps, t, s1, s2, which=i) for i in range(1, 7))
            gen = max(gen, abs(total - parts) / max(1.0, abs(total)))
    return [
        Check("erf_product_identity", "max_abs_error", err, cfg["tol_erf"], "<"),
        Check("generator_decomposition", "max_rel_error", gen, cfg["tol_generator"], "<"),
    ]


def suite_coercivity(cfg) -> list:
    from .coercivity import coercivity_constant, eigen_asymptotics, gram_operator, k0_identity_check, plus_kernel_psd_check
    from .kernel_lab import assemble_K0

    rng = np.random.default_rng(cfg["seed"])
    gap = max(k0_identity_check(rng.normal(size=128), 128)[2] for _ in range(3))
    lam = coercivity_constant(assemble_K0(64), gram_operator(64))
    ratios = eigen_asymptotics(25, 2048)[4:]
    return [
        Check("k0_integration_by_parts", "relative_gap", gap, cfg["tol_ibp"], "<"),
        Check("k0_coercivity", "min_generalized_eigenvalue", lam, cfg["k0_floor"], ">="),
        Check("smooth_part_psd", "min_eigenvalue", plus_kernel_psd_check(256), cfg["psd_floor"], ">="),
        Check("eigenvalue_asymptotics", "max_ratio_deviation", float(np.max(np.abs(ratios - 1))), cfg["eigen_band"], "<"),
    ]


def suite_burgers(cfg) -> list:
    from .burgers_sim import first_order_coeffs, h2_surrogate, loglog_slope, persistence_check, random_control, second_order_coeffs
    from .coercivity import quadratic_form
    from .kernel_lab import assemble_K_eps
    from .spectral_core import SpaceGrid, rho_eval, rho_sine_coeffs

    eps = cfg["eps"]
    K = assemble_K_eps(eps, cfg["nodes"])
    rng = np.random.default_rng(cfg["seed"])
    rho_n = rho_sine_coeffs(np.arange(1, 256))
    worst = 0.0
    for _ in range(2):
        u = random_control(rng, 1.0, 512, 1.0)
        b = second_order_coeffs(eps, first_order_coeffs(eps, u, 255))
        kf = quadratic_form(K, u)
        worst = max(worst, abs(float(rho_n @ b[-1]) - kf) / abs(kf))
    Ts = np.geomspace(1e-3, 1e-1, 5)
    pgrid = SpaceGrid(127)
    x = pgrid.nodes
    y0 = x * (1 - x) * (x - 0.3)
    y0 = y0 / h2_surrogate(y0)
    dev = [persistence_check(T, y0, rho_eval(pgrid.nodes), space=pgrid, n_t=64) for T in Ts]
    return [
        Check("kernel_pde_agreement", "max_rel_gap", worst, cfg["tol_pde"], "<"),
        Check("persistence", "loglog_slope", loglog_slope(Ts, dev), cfg["persistence_slope"], ">="),
    ]


def suite_findim(cfg) -> list:
    from numpy.polynomial import Polynomial

    from .findim import conservation_check_example1, drift_check_examples23, lie_bracket_q11_check
    from .spectral_core import Control

    rng = np.random.default_rng(cfg["seed"])
    drift = max(conservation_check_example1(Control(rng.normal(size=65), 1.0), 1.0, n_steps=1024) for _ in range(3))
    inc = 0.0
    for ex in (2, 3):
        got, want = drift_check_examples23(ex)
        inc = max(inc, abs(got - want) / want)
    q = lie_bracket_q11_check([Polynomial([0, 1, -1]), Polynomial([0, 1, 0, -1])])
    return [
        Check("conservation_law", "max_drift", drift, cfg["tol_conservation"], "<"),
        Check("flat_output_increment", "max_rel_error", inc, cfg["tol_increment"], "<"),
        Check("quadratic_term_at_constants", "max_abs_value", max(abs(r["value"]) for r in q), cfg["tol_q11"], "<"),
    ]


def suite_opt(cfg) -> list:
    from .burgers_sim import random_control
    from .control_opt import adjoint_gradient, attempt_null_control_batch, directional_fd
    from .spectral_core import SpaceGrid, rho_eval, sine_analyze

    rng = np.random.default_rng(cfg["seed"])
    T = cfg["horizon"]
    u = random_control(rng, cfg["eta"], 64, T)
    c0 = sine_analyze(cfg["delta"] * rho_eval(SpaceGrid(63).nodes)).coeffs
    _, g = adjoint_gradient(1.0, u, c0=c0)
    err = 0.0
    for _ in range(3):
        d = random_control(rng, 1.0, 64, T).samples
        fd = directional_fd(1.0, u, d, c0)
        err = max(err, float(abs(fd - np.sum(u.weights * g * d)) / abs(fd)))
    runs = attempt_null_control_batch(cfg["delta"], T, cfg["eta"], 40, seeds=range(3))
    return [
        Check("adjoint_gradient", "max_rel_error", err, cfg["tol_gradient"], "<"),
        Check("null_control_obstruction", "min_final_projection", min(r.final_projection for r in runs), 0.0, ">="),
    ]


SUITES = {
    "spectral": suite_spectral,
    "kernel": suite_kernel,
    "coercivity": suite_coercivity,
    "burgers": suite_burgers,
    "findim": suite_findim,
    "opt": suite_opt,
}


def threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# commands


def cmd_verify(args, cfg) -> Report:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    with ThreadPoolExecutor(max_workers=threads()) as pool:
        results = list(pool.map(lambda n: SUITES[n](cfg), names))
    rep = Report(f"verify:{args.suite}", params=dict(cfg))
    for checks in results:
        rep.checks.extend(checks)
    return rep


def cmd_kernel(args, cfg) -> Report:
    from .kernel_lab import assemble_K_eps, kernel_to_csv

    K = assemble_K_eps(cfg["eps"], cfg["nodes"])
    kernel_to_csv(K, args.out)
    asym = float(np.max(np.abs(K.values - K.values.T)))
    rep = Report("kernel:assemble", params={"eps": cfg["eps"], "nodes": cfg["nodes"], "out": args.out})
    rep.metrics["frobenius"] = float(np.linalg.norm(K.values))
    rep.checks.append(Check("kernel_symmetry", "max_asymmetry", asym, 1e-12, "<"))
    return rep


def cmd_coercivity(args, cfg) -> Report:
    from .coercivity import coercivity_constant, gram_operator
    from .kernel_lab import assemble_K_eps

    eps_list = args.eps_list or [cfg["eps"]]
    M = cfg["nodes"]
    gram = gram_operator(M)
    rep = Report("coercivity", params={"eps_list": ",".join(map(repr, eps_list)), "nodes": M})
    for eps in eps_list:
        lam = coercivity_constant(assemble_K_eps(eps, M).weighted() / np.sqrt(eps), gram)
        rep.metrics[f"k1[{eps!r}]"] = lam
        if eps <= 1e-2:
            rep.checks.append(Check(f"scaled_kernel_coercivity[{eps!r}]", "min_generalized_eigenvalue", lam, cfg["k1_floor"], ">="))
    return rep


def cmd_drift(args, cfg) -> Report:
    from .burgers_sim import drift_experiment

    res = drift_experiment(cfg["eps"], cfg["samples"], cfg["seed"])
    proj = res["projections"]
    rep = Report("drift", params={k: cfg[k] for k in ("eps", "samples", "seed")})
    rep.metrics["k2_fit"] = res["k2_fit"]
    rep.metrics["max_projection"] = float(np.nanmax(proj))
    rep.checks.append(Check("drift_sign", "min_projection", float(np.min(proj)), 0.0, ">="))
    rep.checks.append(Check("drift_sign_strict", "positive_fraction", float(np.mean(proj > 0)), 1.0, ">="))
    return rep


def cmd_optimize(args, cfg) -> Report:
    from .control_opt import attempt_null_control
    from .spectral_core import SpaceGrid, rho_eval, sine_analyze

    run = attempt_null_control(cfg["delta"], cfg["horizon"], cfg["eta"], cfg["iters"], cfg["seed"])
    rho_norm = float(np.linalg.norm(sine_analyze(rho_eval(SpaceGrid(63).nodes)).coeffs))
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write("iteration,cost\n")
            for i, c in enumerate(run.costs):
                fh.write(f"{i},{c!r}\n")
    rep = Report("optimize", params={k: cfg[k] for k in ("delta", "horizon", "eta", "iters", "seed")})
    rep.metrics["best_cost"] = run.best_cost
    rep.metrics["status"] = run.status
    rep.metrics["final_projection"] = run.final_projection
    rep.checks.append(Check("obstruction_sign", "final_projection", run.final_projection, 0.0, ">="))
    rep.checks.append(Check("obstruction_floor", "final_norm", run.final_norm, 0.5 * cfg["delta"] * rho_norm, ">="))
    return rep


def cmd_findim(args, cfg) -> Report:
    from numpy.polynomial import Polynomial

    from .findim import conservation_check_example1, drift_check_examples23, flat_profile, lie_bracket_q11_check

    rep = Report(f"findim:{args.example}")
    if args.example == "1":
        drift = conservation_check_example1(flat_profile(1.0).deriv(3), 1.0, b0=0.0)
        rep.checks.append(Check("conservation_law", "max_drift", drift, cfg["tol_conservation"], "<"))
    elif args.example in ("2", "3"):
        got, want = drift_check_examples23(int(args.example))
        rep.metrics["increment"] = got
        rep.metrics["weak_norm"] = want
        rep.checks.append(Check("flat_output_increment", "rel_error", abs(got - want) / want, cfg["tol_increment"], "<"))
    else:
        res = lie_bracket_q11_check([Polynomial([0, 1, -1]), Polynomial([0, 1])])
        rep.metrics["non_admissible_value"] = res[1]["value"]
        rep.checks.append(Check("quadratic_term_at_constants", "abs_value", abs(res[0]["value"]), cfg["tol_q11"], "<"))
    return rep


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="burgerslab", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="key=value file overriding the defaults")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify")
    v.add_argument("--suite", choices=[*SUITES, "all"], default="all")

    k = sub.add_parser("kernel")
    k.add_argument("action", choices=["assemble"])
    k.add_argument("--eps", type=float)
    k.add_argument("--nodes", type=int)
    k.add_argument("--out", required=True)

    c = sub.add_parser("coercivity")
    c.add_argument("--eps-list", type=float, nargs="+")
    c.add_argument("--nodes", type=int)
    c.add_argument("--report")

    d = sub.add_parser("drift")
    d.add_argument("--eps", type=float)
    d.add_argument("--samples", type=int)
    d.add_argument("--seed", type=int)

    o = sub.add_parser("optimize")
    o.add_argument("--delta", type=float)
    o.add_argument("--horizon", type=float)
    o.add_argument("--eta", type=float)
    o.add_argument("--iters", type=int)
    o.add_argument("--seed", type=int)
    o.add_argument("--trace", help="write the cost history as CSV")

    f = sub.add_parser("findim")
    f.add_argument("--example", choices=["1", "2", "3", "q11"], required=True)
    return p


COMMANDS = {
    "verify": cmd_verify,
    "kernel": cmd_kernel,
    "coercivity": cmd_coercivity,
    "drift": cmd_drift,
    "optimize": cmd_optimize,
    "findim": cmd_findim,
}


def _numerical_errors():
    from .burgers_sim import BlowUpError
    from .coercivity import IllConditionedError
    from .control_opt import GramianConditionError, OptimizerDivergence
    from .kernel_lab import QuadratureError

    return (BlowUpError, IllConditionedError, GramianConditionError, OptimizerDivergence, QuadratureError, FloatingPointError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    overrides = {k: getattr(args, k, None) for k in DEFAULTS if getattr(args, k, None) is not None}
    try:
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            if key not in DEFAULTS:
                raise ConfigError(f"unknown key {key!r}")
            overrides.setdefault(key, _coerce(key, value))
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    start = time.perf_counter()
    try:
        rep = COMMANDS[args.command](args, cfg)
    except _numerical_errors() as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    rep.duration = time.perf_counter() - start
    text = rep.to_text()
    sys.stdout.write(text)
    if getattr(args, "report", None):
        with open(args.report, "w") as fh:
            fh.write(text)
    for c in rep.failing():
        print(f"FAILED {c.anchor}: {c.metric}={c.value!r} (needs {c.relation} {c.threshold!r})", file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
