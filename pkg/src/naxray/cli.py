"""Scenario-driven command line front end.

Usage:  naxray <command> <config.json> [--output-dir DIR] [--threads N]

Commands: validate | scatter | factorize | verify | reconstruct.  The
single JSON config is the whole scenario; it is echoed next to the
outputs so runs are reproducible.  Exit codes: 0 pass, 1 numeric
failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import factorization as fz
from . import gauge as gg
from . import transport as tp
from .fiber import (FiberFunction, FiberGrid, check_structure_equations,
                    random_band_limited_probe)
from .fields import constant_matrix_field, random_matrix_field, random_vector_field
from .geometry import influx_grid, validate_simplicity
from .metrics import metric_from_json
from .serialize import dump17, svg_heatmap, write_scattering_csv

__all__ = ["main", "run_command", "ScenarioConfig", "ConfigError"]

COMMANDS = ("validate", "scatter", "factorize", "verify", "reconstruct")

GRID_DEFAULTS = {"n_r": 64, "n_phi": 128, "n_theta": 256,
                 "n_beta": 64, "n_mu": 32, "glancing_margin": 0.1}
SOLVER_DEFAULTS = {"step": 1e-3, "root_tol": 1e-10, "fact_tol": 1e-11,
                   "max_iter": 60}


class ConfigError(ValueError):
    pass


class ScenarioConfig:
    """Parsed scenario: metric, pair, grids, solver, experiment, output."""

    def __init__(self, raw: dict):
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        self.raw = raw
        try:
            self.metric = metric_from_json(raw.get("metric", {"family": "euclidean"}))
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"bad metric spec: {exc}") from exc
        self.grids = dict(GRID_DEFAULTS)
        self.grids.update(raw.get("grids", {}))
        self.solver = dict(SOLVER_DEFAULTS)
        self.solver.update(raw.get("solver", {}))
        for k, v in self.solver.items():
            if k in ("step", "root_tol", "fact_tol") and not v > 0:
                raise ConfigError(f"solver tolerance {k} must be positive")
        if self.grids["n_theta"] > 1024:
            raise ConfigError("n_theta above the documented bound 1024")
        self.pair_spec = raw.get("pair", {"n": 1})
        self.n = int(self.pair_spec.get("n", 1))
        if not 1 <= self.n <= 4:
            raise ConfigError("pair dimension n must be within 1..4")
        self.experiment = raw.get("experiment", {})
        self.output = raw.get("output", {})

    # -- builders ----------------------------------------------------------

    def pair(self) -> tp.PairAttenuation:
        spec = self.pair_spec
        seed = int(spec.get("seed", 0))

        def matrix_from(entry):
            re = np.asarray(entry["re"], float)
            im = np.asarray(entry.get("im", np.zeros_like(re)), float)
            return re + 1j * im

        def field_from(kind_spec, base_seed):
            if kind_spec is None:
                return None
            kind = kind_spec.get("kind", "zero")
            if kind == "zero":
                return None
            if kind == "constant":
                return constant_matrix_field(matrix_from(kind_spec["matrix"]))
            if kind == "random":
                cut = kind_spec.get("cutoff")
                return random_matrix_field(
                    self.n,
                    degree=int(kind_spec.get("degree", 2)),
                    scale=float(kind_spec.get("scale", 0.2)),
                    seed=base_seed,
                    skew_hermitian=bool(kind_spec.get("skew_hermitian", False)),
                    real=bool(kind_spec.get("real", False)),
                    traceless=bool(kind_spec.get("traceless", False)),
                    cutoff=tuple(cut) if cut else None)
            raise ConfigError(f"unknown field kind {kind!r}")

        a_spec = spec.get("A")
        phi_spec = spec.get("Phi")
        A1 = field_from(a_spec, seed + 1) if a_spec else None
        A2 = field_from(a_spec, seed + 2) if a_spec else None
        Phi = field_from(phi_spec, seed + 3) if phi_spec else None
        return tp.PairAttenuation(self.metric, self.n, A1=A1, A2=A2, Phi=Phi)

    def influx(self):
        g = self.grids
        return influx_grid(self.metric, int(g["n_beta"]), int(g["n_mu"]),
                           float(g["glancing_margin"]))

    def bundle_grid(self, extended: bool = False) -> FiberGrid:
        g = self.grids
        r_max = 1.0 + self.metric.epsilon / 2.0 if extended else 1.0
        return FiberGrid(int(g["n_r"]), int(g["n_phi"]), int(g["n_theta"]),
                         r_max=r_max)


# ---------------------------------------------------------------------------
# commands


def _outdir(cfg: ScenarioConfig, override):
    path = override or cfg.output.get("directory", ".")
    os.makedirs(path, exist_ok=True)
    dump17(cfg.raw, os.path.join(path, "config_echo.json"))
    return path


def cmd_validate(cfg: ScenarioConfig, outdir: str, threads: int) -> int:
    rep = validate_simplicity(cfg.metric, step=cfg.solver["step"])
    dump17(rep.as_dict(), os.path.join(outdir, "simplicity.json"))
    return 0 if rep.simple else 1


def cmd_scatter(cfg: ScenarioConfig, outdir: str, threads: int) -> int:
    rep = validate_simplicity(cfg.metric, n_beta=12, n_mu=6,
                              step=max(cfg.solver["step"], 2e-3))
    if not rep.simple:
        dump17(rep.as_dict(), os.path.join(outdir, "simplicity.json"))
        return 1
    pair = cfg.pair()
    grid = cfg.influx()
    sd = tp.scattering_data(cfg.metric, pair, grid, step=cfg.solver["step"],
                            threads=threads)
    write_scattering_csv(os.path.join(outdir, "scattering.csv"), sd)
    dump17({"n": sd.n, "grid": [int(cfg.grids["n_beta"]), int(cfg.grids["n_mu"])],
            "max_cond": sd.max_cond, "side": sd.side},
           os.path.join(outdir, "scattering_summary.json"))
    entry = cfg.experiment.get("plot_entry")
    if entry is not None:
        i, j = int(entry[0]), int(entry[1])
        Z = np.abs(sd.values[:, i, j]).reshape(int(cfg.grids["n_beta"]),
                                               int(cfg.grids["n_mu"]))
        svg_heatmap(os.path.join(outdir, f"scattering_abs_{i}_{j}.svg"), Z.T,
                    title=f"|C_{i}{j}| over the influx grid",
                    xlabel="beta index", ylabel="mu index")
    return 0


def cmd_factorize(cfg: ScenarioConfig, outdir: str, threads: int) -> int:
    pair = cfg.pair()
    grid = cfg.bundle_grid(extended=True)
    try:
        R, pre = tp.integrating_factor(cfg.metric, pair, grid,
                                       step=cfg.solver["step"])
        fact = fz.factorize(R, tol=cfg.solver["fact_tol"],
                            max_iter=int(cfg.solver["max_iter"]))
        b_atten, rep, _ = fz.transform_attenuation(cfg.metric, pair, R, fact)
        mer = fz.mode_equation_residuals(cfg.metric, pair, fact.F, b_atten)
    except fz.FactorizationError as exc:
        dump17({"error": str(exc)}, os.path.join(outdir, "factorize.json"))
        return 1
    diag = {
        "recon_res": fact.diagnostics["recon_res"],
        "holF": fact.diagnostics["holF"],
        "holFinv": fact.diagnostics["holFinv"],
        "unitU": fact.diagnostics["unitU"],
        "skew_defect": rep["skew_defect"],
        "outband": rep["outband"],
        "route_dev": rep["route_dev"],
        "integrating_residual": pre,
        "mode_equations": mer,
    }
    dump17(diag, os.path.join(outdir, "factorize.json"))
    return 0


def _identity_runners(cfg: ScenarioConfig, threads: int):
    metric = cfg.metric
    step = cfg.solver["step"]
    pair = cfg.pair()
    seed = int(cfg.pair_spec.get("seed", 0))

    def small_influx():
        g = cfg.grids
        return influx_grid(metric, max(4, int(g["n_beta"]) // 4),
                           max(2, int(g["n_mu"]) // 4),
                           float(g["glancing_margin"]))

    def run_structure():
        g = cfg.grids
        grid = FiberGrid(min(48, int(g["n_r"])), min(96, int(g["n_phi"])), 32)
        probes = [random_band_limited_probe(metric, grid, seed=seed + i)
                  for i in range(3)]
        return check_structure_equations(metric, probes).max_residual

    def run_pseudo():
        other = tp.PairAttenuation(
            metric, cfg.n,
            A1=random_matrix_field(cfg.n, seed=seed + 11, scale=0.15),
            Phi=random_matrix_field(cfg.n, seed=seed + 12, scale=0.15))
        return gg.pseudo_linearization_residual(metric, pair, other,
                                                small_influx(), step=step)

    def run_outflux():
        return tp.scattering_minus_check(metric, pair, small_influx(),
                                         step=step)

    def run_gauge():
        g0 = gg.GaugeElement.random_planted(cfg.n, seed=seed + 21)
        return gg.gauge_invariance_check(metric, pair, g0, small_influx(),
                                         step=step)

    def run_unitarity():
        phi = random_matrix_field(cfg.n, seed=seed + 31, scale=0.3,
                                  skew_hermitian=True)
        rep = gg.unitarity_criterion(metric, phi, small_influx(), step=step)
        return max(rep["unitarity_defect"], rep["conjugation_identity"])

    return {
        "structure_equations": (run_structure, 1e-4),
        "pseudo_linearization": (run_pseudo, 1e-5),
        "outflux_relation": (run_outflux, 1e-5),
        "gauge_invariance": (run_gauge, 1e-5),
        "unitarity_criterion": (run_unitarity, 1e-6),
    }


def cmd_verify(cfg: ScenarioConfig, outdir: str, threads: int) -> int:
    runners = _identity_runners(cfg, threads)
    names = cfg.experiment.get("identities", sorted(runners))
    thresholds = cfg.experiment.get("thresholds", {})
    reports = {}
    ok = True
    for name in names:
        if name not in runners:
            raise ConfigError(f"unknown identity {name!r}")
        fn, default_tol = runners[name]
        tol = float(thresholds.get(name, default_tol))
        t0 = time.time()
        residual = float(fn())
        passed = residual < tol
        ok &= passed
        reports[name] = {"residual": residual, "threshold": tol,
                         "pass": passed, "runtime_s": time.time() - t0}
    dump17(reports, os.path.join(outdir, "verify.json"))
    return 0 if ok else 1


def cmd_reconstruct(cfg: ScenarioConfig, outdir: str, threads: int) -> int:
    name = cfg.experiment.get("name")
    if name not in ("planted_gauge", "planted_kernel", "perturbation_witness"):
        raise ConfigError(f"unknown experiment {name!r}")
    metric = cfg.metric
    step = cfg.solver["step"]
    pair = cfg.pair()
    seed = int(cfg.pair_spec.get("seed", 0))
    g = cfg.grids
    fib_grid = FiberGrid(int(g["n_r"]), int(g["n_phi"]), int(g["n_theta"]))
    influx = cfg.influx()
    t0 = time.time()

    if name == "planted_kernel":
        p = random_vector_field(cfg.n, seed=seed + 5, boundary_power=2)
        kern = gg.plant_linear_kernel(metric, pair, p, influx, fib_grid,
                                      step=step)
        rep = kern.report
        verdict = "pass" if (rep["transform_sup"] < 1e-5
                             and rep["solution_plus_p_sup"] < 1e-3) else "fail"
        defects = rep
    else:
        planted = gg.GaugeElement.random_planted(cfg.n, seed=seed + 7)
        pairB = gg.gauge_apply(pair, planted)
        if name == "perturbation_witness":
            bump = np.zeros((cfg.n, cfg.n), complex)
            bump[0, 0] = 0.1
            base_phi = pairB.Phi

            def phi(x1, x2, base=base_phi):
                zero = np.zeros(np.broadcast(x1, x2).shape + (cfg.n, cfg.n),
                                complex)
                out = zero if base is None else np.asarray(base(x1, x2), complex)
                return out + bump
            pairB = tp.PairAttenuation(metric, cfg.n, A1=pairB.A1,
                                       A2=pairB.A2, Phi=phi)
        rec = gg.reconstruct_gauge(metric, pair, pairB, fib_grid, influx,
                                   step=step)
        defects = dict(rec.defects)
        verdict = rec.verdict
        if name == "planted_gauge" and verdict != "not-equivalent":
            R_, P_, _ = fib_grid.meshes()
            x1 = (R_ * np.cos(P_))[:, :, 0]
            x2 = (R_ * np.sin(P_))[:, :, 0]
            err = np.abs(rec.u_values - planted.u(x1, x2)).max(axis=(-2, -1))
            defects["planted_sup_error"] = float(err.max())
            np.savetxt(os.path.join(outdir, "gauge_error_field.csv"),
                       err, delimiter=",", fmt="%.17g")
            svg_heatmap(os.path.join(outdir, "gauge_error.svg"), err,
                        title="|recovered - planted|", xlabel="phi index",
                        ylabel="r index")
            if defects["planted_sup_error"] > 1e-3:
                verdict = "fail"

    report = {
        "experiment": name,
        "inputs": cfg.raw,
        "defects": defects,
        "verdict": verdict,
        "grid": [int(g["n_r"]), int(g["n_phi"]), int(g["n_theta"])],
        "runtime_s": time.time() - t0,
    }
    dump17(report, os.path.join(outdir, f"{name}.json"))
    expected_not_equivalent = name == "perturbation_witness"
    if expected_not_equivalent:
        return 0 if verdict == "not-equivalent" else 1
    return 0 if verdict == "pass" else 1


def run_command(command: str, cfg: ScenarioConfig, outdir, threads: int) -> int:
    path = _outdir(cfg, outdir)
    handler = {
        "validate": cmd_validate,
        "scatter": cmd_scatter,
        "factorize": cmd_factorize,
        "verify": cmd_verify,
        "reconstruct": cmd_reconstruct,
    }[command]
    return handler(cfg, path, threads)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="naxray",
        description="forward solvers and identity checks for non-Abelian "
                    "X-ray transforms on conformal disc metrics")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("config", help="path to the scenario JSON")
    parser.add_argument("--output-dir", default=None)
    parser.add_argument("--threads", type=int, default=1)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code != 0 else 0
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
        cfg = ScenarioConfig(raw)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return run_command(args.command, cfg, args.output_dir, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # numeric failures -> exit 1
        print(f"run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
