"""Config-driven command line: runs the pipeline and writes machine-readable artifacts.

Every invocation writes ``manifest.json`` (package version, CLI flags, and the
fully resolved config) plus one ``report-<command>.json`` per executed command
and plot-ready CSV tables.  Artifacts are deterministic: fixed seeds, fixed
reduction orders, no timestamps, floats at 17 significant digits in CSVs.

Exit status: 0 all checks passed, 1 numerical failure (diagnostic on stderr),
2 config or usage violation (offending key on stderr).
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from typing import Any, Callable

import numpy as np

from . import __version__
from .admissibility import (BetaFunction, check_limit_condition, check_monotonicity,
                            delta_max, delta_max_bounds, fundamental_identity_residual,
                            tail_integral)
from .config import (build_comparison, build_params, build_perturbation, build_rates,
                     build_solver_config, build_system, load_run_input, resolve_config,
                     scale_tolerances)
from .dichotomy import pair_grid, sharpness_probe, verify_dichotomy
from .errors import ConfigError, NumericalError
from .manifold import outer_contraction_factor, solve_manifold
from .rates import check_growth_axioms
from .verify import (check_decay, check_invariance, check_perturbation_bound,
                     random_decay_pairs, random_invariance_samples)

COMMANDS = ("check-rates", "check-dichotomy", "admissibility", "solve-manifold",
            "verify", "perturb-compare", "all")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _jsonable(obj: Any) -> Any:
    """Coerce numpy scalars/arrays and non-finite floats into valid JSON."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj


def _write_json(path: str, obj: Any) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, (int, float, np.floating))
                              and not isinstance(v, bool) else str(v)
                              for v in row) + "\n")


class Runner:
    """Shared state for one CLI invocation (solved graphs are reused by `all`)."""

    def __init__(self, resolved: dict, out_dir: str, seed: int, tol_scale: float,
                 threads: int):
        self.resolved = resolved
        self.out = out_dir
        self.seed = seed
        self.tol_scale = tol_scale
        self.threads = threads
        self.mu, self.nu = build_rates(resolved)
        self.params = build_params(resolved)
        self.system = build_system(resolved, self.mu, self.nu)
        self.pert = build_perturbation(resolved["perturbation"], self.system.n)
        self.cfg = build_solver_config(resolved)
        self._graph = None
        self._history = None

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, stream])

    def graph(self):
        if self._graph is None:
            self._graph = solve_manifold(self.system, self.mu, self.nu, self.params,
                                         self.pert, self.cfg)[0]
        return self._graph

    def solve(self):
        graph, history = solve_manifold(self.system, self.mu, self.nu, self.params,
                                        self.pert, self.cfg)
        self._graph, self._history = graph, history
        return graph, history

    # ------------------------------------------------------------- commands

    def check_rates(self) -> tuple[bool, dict]:
        ch = self.resolved["checks"]
        grid = np.linspace(0.0, ch["axiom_t_max"], ch["axiom_points"])
        reports = {}
        rows = []
        with np.errstate(over="ignore", invalid="ignore"):
            mu_vals = np.asarray(self.mu(grid), dtype=float)
            nu_vals = np.asarray(self.nu(grid), dtype=float)
        for t, mv, nv in zip(grid, mu_vals, nu_vals):
            rows.append([t, mv, nv])
        _write_csv(self.path("rates.csv"), ["t", "mu", "nu"], rows)
        passed = True
        for name, rate in (("mu", self.mu), ("nu", self.nu)):
            rep = check_growth_axioms(rate, grid)
            reports[name] = {
                "label": rate.label, "passed": rep.passed,
                "unit_at_zero": rep.unit_at_zero, "monotone_on_grid": rep.monotone_on_grid,
                "diverges": rep.diverges, "unit_error": rep.unit_error,
                "worst_violation": rep.worst_violation, "worst_pair": rep.worst_pair,
                "notes": list(rep.notes),
            }
            passed = passed and rep.passed
        return passed, {"rates": reports, "grid_max": ch["axiom_t_max"],
                        "grid_points": ch["axiom_points"]}

    def check_dichotomy(self) -> tuple[bool, dict]:
        ch = self.resolved["checks"]
        tol = ch["dichotomy_tol"]
        pairs = pair_grid(ch["dichotomy_t_max"], ch["dichotomy_pairs"])
        cert = verify_dichotomy(self.system, self.mu, self.nu, self.params, pairs,
                                tol=tol, h=ch["dichotomy_h"])
        _write_csv(self.path("dichotomy-pairs.csv"),
                   ["t", "s", "stable_ratio", "unstable_ratio", "commutation_residual"],
                   [list(r) for r in cert.rows])
        report = {
            "passed": cert.passed, "tol": tol, "n_pairs": cert.n_pairs,
            "max_stable_ratio": cert.max_stable_ratio,
            "max_unstable_ratio": cert.max_unstable_ratio,
            "max_commutation_residual": cert.max_commutation_residual,
            "notes": list(cert.notes),
        }
        passed = cert.passed
        if self.system.meta.get("kind") == "sharp_oscillating":
            probe = sharpness_probe(self.system, range(1, ch["sharpness_k_max"] + 1))
            _write_csv(self.path("sharpness.csv"),
                       ["k", "t", "s", "observed", "expected", "residual"],
                       [[r["k"], r["t"], r["s"], r["observed"], r["expected"],
                         r["residual"]] for r in probe])
            worst = max(r["residual"] for r in probe)
            report["sharpness"] = {"worst_residual": worst, "attained": worst <= tol,
                                   "k_max": ch["sharpness_k_max"]}
            passed = passed and worst <= tol
        return passed, report

    def admissibility(self) -> tuple[bool, dict]:
        ch = self.resolved["checks"]
        d = self.resolved["dichotomy"]
        a, eps = d["a"], d["eps"]
        q = self.pert.q
        limit = check_limit_condition(self.mu, self.nu, a, d["b"], eps)
        beta = BetaFunction(self.mu, self.nu, a, eps, q,
                            rel_tol=self.resolved["solver"]["quad_rel_tol"])
        s_values = np.linspace(0.0, ch["beta_s_max"], ch["beta_points"])
        rows = []
        worst_resid = 0.0
        worst_match = 0.0
        for s in s_values:
            s = float(s)
            b_quad = beta.beta(s)
            integral = tail_integral(self.mu, self.nu, a, eps, q, s,
                                     self.resolved["solver"]["quad_rel_tol"])
            resid = fundamental_identity_residual(self.mu, self.nu, a, eps, q, s,
                                                  self.resolved["solver"]["quad_rel_tol"])
            worst_resid = max(worst_resid, resid)
            b_closed = beta.closed_form_value(s)
            if b_closed is not None:
                worst_match = max(worst_match, abs(b_quad / b_closed - 1.0))
            ratio = math.exp(a * float(self.mu.log_eval(s))) / b_quad
            rows.append([s, b_quad, b_closed if b_closed is not None else math.nan,
                         beta.beta_tilde(s), ratio, integral, resid])
        _write_csv(self.path("beta.csv"),
                   ["s", "beta_quadrature", "beta_closed_form", "beta_tilde",
                    "mu_pow_a_over_beta", "tail_integral", "identity_residual"], rows)
        mono = check_monotonicity(self.mu, self.nu, a, eps, q,
                                  np.linspace(0.0, ch["beta_s_max"],
                                              ch["monotonicity_points"]),
                                  rel_tol=self.resolved["solver"]["quad_rel_tol"])
        cap = self.cfg.C if self.cfg.C is not None else 2.0 * d["D"]
        bounds = delta_max_bounds(self.pert.c, q, cap, d["D"])
        certified = delta_max(self.pert.c, q, cap, d["D"], self.cfg.delta_cap)
        identity_ok = worst_resid <= ch["identity_tol"]
        match_ok = worst_match <= ch["beta_match_tol"] or beta.closed_form is None
        passed = bool(limit.passed and identity_ok and match_ok
                      and mono.beta_nonincreasing and mono.ratio_nonincreasing)
        report = {
            "passed": passed,
            "limit_condition": {"passed": limit.passed, "inconclusive": limit.inconclusive,
                                "eventually_decreasing": limit.eventually_decreasing,
                                "tail_drop_ok": limit.tail_drop_ok},
            "beta": {"closed_form": beta.closed_form, "s_values": list(map(float, s_values)),
                     "worst_identity_residual": worst_resid,
                     "identity_tol": ch["identity_tol"],
                     "worst_closed_form_mismatch": worst_match,
                     "beta_match_tol": ch["beta_match_tol"],
                     "beta_at_zero": rows[0][1]},
            "monotonicity": {"beta_nonincreasing": mono.beta_nonincreasing,
                             "ratio_nonincreasing": mono.ratio_nonincreasing,
                             "worst_beta_uptick": mono.worst_beta_uptick,
                             "worst_ratio_uptick": mono.worst_ratio_uptick},
            "delta_max": {"value": certified, "bounds": bounds, "c": self.pert.c,
                          "q": q, "C": cap, "D": d["D"]},
        }
        return passed, report

    def solve_manifold_cmd(self) -> tuple[bool, dict]:
        graph, history = self.solve()
        rows = []
        for k, s in enumerate(graph.s_grid):
            pts = graph.node_points(k)
            for j in range(pts.shape[0]):
                rows.append([int(k), float(s), float(graph.radii[k]),
                             *pts[j].tolist(), *graph.values[k, j].tolist()])
        header = (["slice", "s", "radius"]
                  + [f"xi_{i + 1}" for i in range(graph.n_stable)]
                  + [f"phi_{i + 1}" for i in range(graph.n_unstable)])
        _write_csv(self.path("graph.csv"), header, rows)
        _write_csv(self.path("convergence.csv"), ["iter", "distance", "ratio"],
                   [[row["iteration"], row["distance"],
                     row["ratio"] if row["ratio"] is not None else math.nan]
                    for row in history])
        factor = outer_contraction_factor(self.pert.c, self.pert.q, graph.C,
                                          self.params.D, graph.delta)
        report = {
            "passed": True, "delta": graph.delta, "C": graph.C,
            "certified_contraction_factor": factor,
            "iterations": history, "n_slices": graph.n_slices,
            "nodes_per_slice": int(graph.unit_lattice.shape[0]),
            "radii": graph.radii.tolist(),
        }
        return True, report

    def verify_cmd(self) -> tuple[bool, dict]:
        v = self.resolved["verification"]
        graph = self.graph()
        rng = self.rng(1)
        inv_samples = random_invariance_samples(graph, self.nu, self.params,
                                                v["n_invariance"], v["tau_max"], rng)
        inv = check_invariance(graph, self.system, self.mu, self.nu, self.params,
                               self.pert, inv_samples, h=v["flow_h"], tol=v["tol"])
        _write_csv(self.path("verify-invariance.csv"),
                   ["s", "xi_norm", "tau", "residual", "arrival_norm", "within_radius"],
                   [[r["s"], r["xi_norm"], r["tau"], r["residual"], r["arrival_norm"],
                     r["within_radius"]] for r in inv.rows])
        pairs = random_decay_pairs(graph, self.nu, self.params, v["n_decay"],
                                   v["tau_max"], rng)
        dec = check_decay(graph, self.system, self.mu, self.nu, self.params, self.pert,
                          pairs, h=v["flow_h"], tol=v["tol"])
        _write_csv(self.path("verify-decay.csv"),
                   ["s", "t", "seed_gap", "observed", "bound", "ratio"],
                   [[r["s"], r["t"], r["seed_gap"], r["observed"], r["bound"], r["ratio"]]
                    for r in dec.rows])
        passed = bool(inv.passed and dec.passed)
        return passed, {
            "passed": passed, "tol": v["tol"],
            "invariance": {"passed": inv.passed, "max_residual": inv.max_residual,
                           "all_within_radius": inv.all_within_radius,
                           "n_samples": v["n_invariance"]},
            "decay": {"passed": dec.passed, "max_ratio": dec.max_ratio,
                      "n_pairs": v["n_decay"]},
        }

    def perturb_compare(self) -> tuple[bool, dict]:
        pert_bar = build_comparison(self.resolved, self.system.n)
        rep = check_perturbation_bound(self.system, self.mu, self.nu, self.params,
                                       self.pert, pert_bar, self.cfg, rng=self.rng(2))
        _write_csv(self.path("compare.csv"),
                   ["graph_distance", "f_distance", "stability_constant", "quotient",
                    "delta"],
                   [[rep.graph_distance, rep.f_distance.value, rep.stability_k,
                     rep.quotient, rep.delta]])
        return bool(rep.passed), {
            "passed": rep.passed, "graph_distance": rep.graph_distance,
            "f_distance": rep.f_distance.value,
            "f_distance_samples": rep.f_distance.n_samples,
            "stability_constant": rep.stability_k, "quotient": rep.quotient,
            "delta": rep.delta, "comparison_label": pert_bar.label,
            "notes": list(rep.notes),
        }


_DISPATCH: dict[str, Callable[[Runner], tuple[bool, dict]]] = {
    "check-rates": Runner.check_rates,
    "check-dichotomy": Runner.check_dichotomy,
    "admissibility": Runner.admissibility,
    "solve-manifold": Runner.solve_manifold_cmd,
    "verify": Runner.verify_cmd,
    "perturb-compare": Runner.perturb_compare,
}


def _failure_detail(report: dict) -> str:
    """One-line hint naming what failed inside a command report."""
    flat: list[str] = []

    def walk(prefix: str, obj: Any) -> None:
        if isinstance(obj, dict):
            for k, v in obj.items():
                if k == "passed" or not isinstance(v, (dict, bool)):
                    continue
                p = f"{prefix}.{k}" if prefix else k
                if isinstance(v, bool):
                    if not v and k not in ("inconclusive",):
                        flat.append(p)
                else:
                    walk(p, v)

    walk("", report)
    return ", ".join(flat) if flat else "see report"


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="stablemanifold",
        description="Stable-manifold solver and checker for nonautonomous systems "
                    "with nonuniform dichotomies.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="path to a JSON config "
                        "(or a manifest.json from a previous run)")
    parser.add_argument("--out", default=None, help="artifact directory "
                        "(default: output.dir from the config)")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker hint; execution is sequential, recorded in the manifest")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed for verification sampling")
    parser.add_argument("--tol-scale", type=float, default=None,
                        help="multiply all pass/fail tolerances by this factor")
    args = parser.parse_args(argv)

    try:
        raw, recorded = load_run_input(args.config)
        label_default = os.path.splitext(os.path.basename(args.config))[0]
        resolved = resolve_config(raw, label_default=label_default)
        # a manifest replays its recorded flags unless overridden, so a run is
        # reproducible from the manifest alone
        recorded = recorded or {}

        def recorded_number(key, default):
            val = recorded.get(key, default)
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f"cli.{key}", f"expected a number, got {val!r}")
            return val

        tol_scale = (args.tol_scale if args.tol_scale is not None
                     else float(recorded_number("tol_scale", 1.0)))
        seed = (args.seed if args.seed is not None
                else int(recorded_number("seed", resolved["seed"])))
        if tol_scale <= 0.0:
            raise ConfigError("--tol-scale", "must be positive")
        if seed < 0:
            raise ConfigError("--seed", "must be >= 0")
        scaled = scale_tolerances(resolved, tol_scale)
        out_dir = args.out if args.out is not None else resolved["output"]["dir"]
        os.makedirs(out_dir, exist_ok=True)
        runner = Runner(scaled, out_dir, seed, tol_scale, max(1, args.threads))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    manifest = {
        "package": {"name": "stablemanifold", "version": __version__},
        "command": args.command,
        "cli": {"seed": seed, "tol_scale": tol_scale,
                "threads": max(1, args.threads), "out": out_dir},
        "config": resolved,
    }
    _write_json(runner.path("manifest.json"), manifest)

    chain = list(_DISPATCH) if args.command == "all" else [args.command]
    for name in chain:
        try:
            passed, report = _DISPATCH[name](runner)
        except NumericalError as exc:
            print(f"{name}: FAIL: {type(exc).__name__}: {exc}", file=sys.stderr)
            _write_json(runner.path(f"report-{name}.json"),
                        {"passed": False, "error": {"type": type(exc).__name__,
                                                    "message": str(exc)}})
            return 1
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        report = {"command": name, **report, "passed": passed}
        _write_json(runner.path(f"report-{name}.json"), report)
        if passed:
            print(f"{name}: PASS")
        else:
            print(f"{name}: FAIL: {_failure_detail(report)}", file=sys.stderr)
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
