"""Command-line experiment driver.

    moose234 solve       --problem vdp --eps 1e-6 --orders 234 --out trace.json
    moose234 convergence --problem manufactured --k 0.1 --k-levels 5
    moose234 wp          --problem vdp --eps-grid 1e-8:1e-1:8 --orders 2,23,234,3,34,4
    moose234 gstab       --mu-range 0.05:0.2:0.001

Flags may also come from a flat ``key = value`` file given with ``--config``;
command-line flags win.  Exit codes: 0 success, 2 integration failure,
3 configuration or I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import gstab
from .controller import ControllerConfig, IntegrationFailure, integrate
from .problems import get_problem, load_reference, vdp_reference
from .stepper import (
    DEFAULT_MU,
    StabFilterConfig,
    StepConfig,
    StepFailure,
    integrate_fixed,
    method_window,
    observed_order,
)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INTEGRATION, EXIT_CONFIG = 0, 2, 3
MODES = ("solve", "convergence", "wp", "gstab")
DEFAULT_METHODS = ("fbdf2", "bdf3", "bdf3stab", "fbdf4")
DEFAULT_SUBSETS = "2,23,234,3,34,4"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    mode: str
    problem: str = "vdp"
    eps: list = field(default_factory=lambda: [1e-6])
    orders: list = field(default_factory=lambda: [(2, 3, 4)])
    k: float = 1e-3
    k_levels: int = 5
    methods: tuple = DEFAULT_METHODS
    mu: float = DEFAULT_MU
    mu_range: tuple = (0.05, 0.2, 1e-3)
    t_end: Optional[float] = None
    startup: str = "ramp"
    error_norm: str = "max"
    est4_form: str = "difference"
    jobs: int = 1
    out: Optional[str] = None
    # csv for tables, json for solve traces
    format: Optional[str] = None

    def validate(self) -> "ExperimentConfig":
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not self.eps or any(not (e > 0 and math.isfinite(e)) for e in self.eps):
            raise ConfigError("tolerances must be positive")
        self.eps = sorted(set(self.eps), reverse=True)
        if not self.k > 0 or (self.mode == "convergence" and self.k_levels < 2):
            raise ConfigError("convergence needs k > 0 and at least two levels")
        if self.format is None:
            self.format = "json" if self.mode == "solve" else "csv"
        if self.format not in ("csv", "json"):
            raise ConfigError(f"unknown format {self.format!r}")
        if self.mode == "solve" and self.format != "json":
            raise ConfigError("solve writes a JSON trace; use --format json")
        if self.startup not in ("ramp", "exact"):
            raise ConfigError(f"unknown startup {self.startup!r}")
        if self.error_norm not in ("max", "final"):
            raise ConfigError(f"unknown error norm {self.error_norm!r}")
        lo, hi, step = self.mu_range
        if not (lo < hi and step > 0):
            raise ConfigError("mu range must be lo:hi:step with lo < hi and step > 0")
        try:
            get_problem(self.problem)
            for m in self.methods:
                method_window(m)
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self


# --- parsing -----------------------------------------------------------------

def parse_orders(text: str) -> list:
    """``"2,23,234"`` -> ``[(2,), (2, 3), (2, 3, 4)]``."""
    subsets = []
    for chunk in str(text).replace(" ", "").split(","):
        if not chunk:
            continue
        if not set(chunk) <= set("234"):
            raise ConfigError(f"order subset {chunk!r} must use digits 2, 3, 4")
        subsets.append(tuple(sorted({int(c) for c in chunk})))
    if not subsets:
        raise ConfigError("no order subsets given")
    return subsets


def parse_eps_grid(text: str) -> list:
    """``lo:hi:count`` -> ``count`` log-spaced tolerances."""
    try:
        lo, hi, count = text.split(":")
        lo, hi, count = float(lo), float(hi), int(count)
    except ValueError:
        raise ConfigError(f"bad --eps-grid {text!r}; expected lo:hi:count") from None
    if not (0 < lo <= hi) or count < 1:
        raise ConfigError("eps grid needs 0 < lo <= hi and count >= 1")
    if count == 1:
        return [lo]
    return [float(v) for v in np.logspace(math.log10(lo), math.log10(hi), count)]


def parse_mu_range(text: str) -> tuple:
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise ConfigError(f"bad --mu-range {text!r}; expected lo:hi:step") from None
    return lo, hi, step


def read_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="moose234", description=__doc__.split("\n\n")[0])
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--problem")
    p.add_argument("--eps", type=float, help="single tolerance")
    p.add_argument("--eps-grid", help="lo:hi:count, log spaced")
    p.add_argument("--orders", help=f"order subsets, e.g. {DEFAULT_SUBSETS}")
    p.add_argument("--k", type=float, help="initial step (solve/wp) or coarsest step (convergence)")
    p.add_argument("--k-levels", type=int)
    p.add_argument("--methods", help="comma list for convergence, e.g. fbdf2,bdf3,bdf3stab,fbdf4")
    p.add_argument("--mu", type=float, help="BDF3-Stab parameter")
    p.add_argument("--mu-range", help="lo:hi:step for gstab scans")
    p.add_argument("--t-end", type=float)
    p.add_argument("--startup", choices=("exact", "ramp"))
    p.add_argument("--error-norm", choices=("max", "final"))
    p.add_argument("--est4-form", choices=("difference", "jacobian"))
    p.add_argument("--jobs", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"))
    return p


def config_from_args(argv=None) -> ExperimentConfig:
    parser = build_parser()
    ns = parser.parse_args(argv)
    raw = read_config_file(ns.config) if ns.config else {}
    for key, value in vars(ns).items():
        if value is not None and key not in ("config",):
            raw[key] = value

    cfg = ExperimentConfig(mode=raw.pop("mode"))
    try:
        if "problem" in raw:
            cfg.problem = str(raw.pop("problem"))
        if "eps_grid" in raw:
            cfg.eps = parse_eps_grid(str(raw.pop("eps_grid")))
            raw.pop("eps", None)
        elif "eps" in raw:
            cfg.eps = [float(v) for v in str(raw.pop("eps")).split(",")]
        if "orders" in raw:
            cfg.orders = parse_orders(str(raw.pop("orders")))
        elif cfg.mode == "wp":
            cfg.orders = parse_orders(DEFAULT_SUBSETS)
        if "methods" in raw:
            cfg.methods = tuple(m.strip() for m in str(raw.pop("methods")).split(",") if m.strip())
        if "mu_range" in raw:
            cfg.mu_range = parse_mu_range(str(raw.pop("mu_range")))
        if "k" in raw:
            cfg.k = float(raw.pop("k"))
        elif cfg.mode == "convergence":
            cfg.k = 0.1
        for key, conv in (("k_levels", int), ("mu", float), ("t_end", float), ("jobs", int),
                          ("startup", str), ("error_norm", str), ("est4_form", str),
                          ("out", str), ("format", str)):
            if key in raw:
                setattr(cfg, key, conv(raw.pop(key)))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    if raw:
        raise ConfigError(f"unknown configuration keys: {sorted(raw)}")
    return cfg.validate()


# --- experiments -------------------------------------------------------------

def _controller_config(cfg: ExperimentConfig, eps: float, orders: tuple) -> ControllerConfig:
    step = StepConfig(stab=StabFilterConfig(mu=cfg.mu), est4_form=cfg.est4_form)
    return ControllerConfig(epsilon=eps, orders_enabled=orders, k_init=cfg.k,
                            startup=cfg.startup, step=step)


def _span(cfg: ExperimentConfig, spec) -> tuple:
    t0, T = spec.default_span
    return (t0, cfg.t_end if cfg.t_end is not None else T)


def _reference(cfg: ExperimentConfig, spec) -> np.ndarray:
    t0, T = _span(cfg, spec)
    if spec.exact is not None:
        return spec.exact(T)
    if spec.name == "vdp":
        ref = load_reference("vdp")
        if ref["t_end"] == T and ref["mu_bar"] == 1000.0:
            return ref["y_ref"]
        return vdp_reference(t_end=T)
    raise ConfigError(f"no reference solution for problem {spec.name!r}")


def run_solve(cfg: ExperimentConfig) -> tuple[dict, int]:
    spec = get_problem(cfg.problem)
    t_span = _span(cfg, spec)
    ccfg = _controller_config(cfg, cfg.eps[-1], cfg.orders[0])
    result = {
        "schema": f"moose234/solve v{SCHEMA_VERSION}",
        "problem": spec.name,
        "t_span": list(t_span),
        "epsilon": ccfg.epsilon,
        "orders": list(ccfg.orders_enabled),
        "mu": cfg.mu,
        "startup": cfg.startup,
    }
    try:
        y, trace = integrate(spec.definition, spec.default_y0, t_span, ccfg, exact=spec.exact)
    except IntegrationFailure as exc:
        result.update(status="failed", reason=str(exc), trace=exc.trace.to_dict())
        return result, EXIT_INTEGRATION
    result.update(status="ok", y_final=[float(v) for v in y], trace=trace.to_dict())
    return result, EXIT_OK


def run_convergence(cfg: ExperimentConfig) -> list[dict]:
    """Rows ``(k, method, error, slope)``; the slope is the least-squares fit
    over all successful levels of that method and repeats on each row."""
    spec = get_problem(cfg.problem)
    if spec.exact is None:
        raise ConfigError(f"convergence study needs an exact solution; {spec.name!r} has none")
    t0, T = _span(cfg, spec)
    step = StepConfig(stab=StabFilterConfig(mu=cfg.mu))
    rows = []
    for method in cfg.methods:
        ks, errs = [], []
        for level in range(cfg.k_levels):
            k = cfg.k / 2**level
            n = max(1, round((T - t0) / k))
            try:
                ts, ys = integrate_fixed(spec.definition, method, t0, T, n, spec.exact, step,
                                         path=True)
                if cfg.error_norm == "max":
                    err = max(float(np.linalg.norm(y - spec.exact(t))) for t, y in zip(ts, ys))
                else:
                    err = float(np.linalg.norm(ys[-1] - spec.exact(T)))
            except StepFailure:
                err = math.nan
            ks.append((T - t0) / n)
            errs.append(err)
        slope = observed_order(ks, errs)
        rows.extend({"k": k, "method": method, "error": e, "slope": slope}
                    for k, e in zip(ks, errs))
    return rows


def _wp_one(job) -> dict:
    problem_name, eps, orders, cfg_dict, y_ref = job
    cfg = ExperimentConfig(**cfg_dict)
    spec = get_problem(problem_name)
    row = {"epsilon": eps, "orders": "".join(map(str, orders))}
    try:
        y, trace = integrate(spec.definition, spec.default_y0, _span(cfg, spec),
                             _controller_config(cfg, eps, orders), exact=spec.exact)
        err = float(np.linalg.norm(y - y_ref) / np.linalg.norm(y_ref))
        status = "ok"
    except IntegrationFailure as exc:
        trace, err, status = exc.trace, math.nan, f"failed: {exc}"
    row.update(error=err, steps=trace.steps, rejections=trace.rejections,
               stage_solves=trace.stage_solves, f_evaluations=trace.f_evaluations,
               wall_time=trace.wall_time, status=status)
    return row


def run_work_precision(cfg: ExperimentConfig) -> list[dict]:
    """One row per (tolerance, order subset): relative error at the final
    time and the work counters.  Failed runs are kept with their reason."""
    spec = get_problem(cfg.problem)
    y_ref = np.asarray(_reference(cfg, spec), dtype=float)
    cfg_dict = {k: v for k, v in vars(cfg).items()}
    jobs = [(cfg.problem, eps, orders, cfg_dict, y_ref) for eps in cfg.eps for orders in cfg.orders]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(_wp_one, jobs))
    else:
        rows = [_wp_one(j) for j in jobs]
    rank = {o: i for i, o in enumerate(cfg.orders)}
    rows.sort(key=lambda r: (-r["epsilon"], rank[tuple(int(c) for c in r["orders"])]))
    return rows


def run_gstab_scan(cfg: ExperimentConfig) -> list[dict]:
    lo, hi, step = cfg.mu_range
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    rows = []
    for i in range(n):
        mu = lo + i * step
        cert = gstab.g_matrix(mu)
        g1, g2, g3 = cert.minors
        rows.append({"mu": mu, "G1": g1, "G2": g2, "G3": g3, "residual": cert.residual,
                     "is_g_stable": int(cert.is_g_stable)})
    return rows


# --- output ------------------------------------------------------------------

COLUMNS = {
    "convergence": ["k", "method", "error", "slope"],
    "wp": ["epsilon", "orders", "error", "steps", "rejections", "stage_solves", "f_evaluations",
           "wall_time", "status"],
    "gstab": ["mu", "G1", "G2", "G3", "residual", "is_g_stable"],
}


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def render(mode: str, rows, fmt: str) -> str:
    if fmt == "json":
        payload = rows if isinstance(rows, dict) else {
            "schema": f"moose234/{mode} v{SCHEMA_VERSION}", "rows": rows}
        return json.dumps(payload, indent=1, allow_nan=True) + "\n"
    buf = io.StringIO()
    buf.write(f"# moose234/{mode} schema v{SCHEMA_VERSION}\n")
    writer = csv.DictWriter(buf, fieldnames=COLUMNS[mode], lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: _fmt(r[k]) for k in COLUMNS[mode]})
    return buf.getvalue()


def _write(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise ConfigError(f"cannot write {out}: {exc}") from None


def main(argv=None) -> int:
    try:
        cfg = config_from_args(argv)
        code = EXIT_OK
        if cfg.mode == "solve":
            result, code = run_solve(cfg)
            _write(render("solve", result, cfg.format), cfg.out)
        elif cfg.mode == "convergence":
            _write(render("convergence", run_convergence(cfg), cfg.format), cfg.out)
        elif cfg.mode == "wp":
            rows = run_work_precision(cfg)
            _write(render("wp", rows, cfg.format), cfg.out)
            if any(r["status"] != "ok" for r in rows):
                code = EXIT_INTEGRATION
        else:
            _write(render("gstab", run_gstab_scan(cfg), cfg.format), cfg.out)
        return code
    except ConfigError as exc:
        print(f"moose234: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
