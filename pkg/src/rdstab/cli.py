"""Command-line front end.

Each subcommand reads one JSON model file, runs the matching solver or
certifier, and writes ``report.json`` plus command-specific CSVs into the
output directory.  Exit codes: 0 success, 2 validation failure, 3 ran fine
but the certificate was not granted, 4 numerical failure.

The ``report.json`` of every command echoes the fully resolved run
configuration; re-running from that echo reproduces the CSV outputs byte for
byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    ConfigError,
    DomainError,
    EstimationError,
    NumericalError,
    RdstabError,
    UsageError,
    ValidationError,
)
from .market import (
    MarketModel,
    as_scalar_system,
    check_kelly_positive,
    check_no_redundant_assets,
    derivative_at_zero,
    evolutionary_stability_report,
    lyapunov_exponent_exact,
)
from .model_config import validate_config
from .stability import (
    CERTIFIED,
    basin_log_ratios,
    basin_radius,
    birkhoff_ladder,
    certify_contraction,
    check_holder,
    furstenberg_kesten_ladder,
    lipschitz_from_derivative_sup,
    product_cocycle_from_step,
)
from .environment import simulate_path

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NOT_CERTIFIED = 3
EXIT_NUMERICAL = 4

COMMANDS = ("solve-kelly", "simulate", "estimate-rate", "basin", "certify",
            "holder", "fk-ladder")
_ESTIMATION_COMMANDS = {"estimate-rate", "basin", "certify", "fk-ladder"}


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved parameters of one CLI run."""

    command: str
    model: str
    out: str
    horizon: int = 10_000
    seeds: tuple[int, ...] = (1,)
    sup_samples: int = 64
    margin: float = 3.0
    delta: float = 0.01
    x0: float = 1e-3
    compose: int = 4
    exponent: float = 1.0
    kappa: float = 0.01
    replicas: int = 32

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if not self.seeds:
            raise UsageError("at least one seed is required")
        if self.command in _ESTIMATION_COMMANDS and self.horizon < 100:
            raise UsageError(
                f"{self.command} needs --horizon of at least 100, got {self.horizon}")
        if self.horizon < 1:
            raise UsageError("horizon must be positive")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if k == "seeds" else v for k, v in data.items()})

    def echo(self) -> dict:
        data = asdict(self)
        data["seeds"] = list(self.seeds)
        return data


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([cell if isinstance(cell, str) else
                             (str(cell) if isinstance(cell, (int, np.integer))
                              else _fmt(float(cell))) for cell in row])


def _write_report(out: Path, payload: dict, config: RunConfig) -> None:
    payload = dict(payload)
    payload["config"] = config.echo()
    with open(out / "report.json", "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _load_market(config: RunConfig) -> MarketModel:
    return validate_config(config.model)


def _cmd_solve_kelly(config: RunConfig, out: Path) -> tuple[int, str]:
    model = _load_market(config)
    residual = model.kelly - model.r * (model.chain.transition @ model.kelly) \
        - (1.0 - model.r) * (model.chain.transition @ model.dividends)
    interior = check_kelly_positive(model)
    independence = check_no_redundant_assets(model)
    _write_csv(out / "kelly.csv", ["state", "asset", "weight"],
               [(s, k, model.kelly[s, k])
                for s in range(model.chain.num_states)
                for k in range(model.num_assets)])
    _write_report(out, {
        "kelly": model.kelly.tolist(),
        "zeta": model.zeta.tolist(),
        "residual_sup": float(np.max(np.abs(residual))),
        "interior": {"passes": interior.passes, "witness": interior.witness,
                     "dividend_witness": interior.dividend_witness},
        "independence": {"passes": independence.passes,
                         "failing_state": independence.failing_state,
                         "min_singular_values": list(independence.min_singular_values)},
    }, config)
    summary = (f"solved benchmark strategy for {model.chain.num_states} states / "
               f"{model.num_assets} assets; smallest weight {interior.witness:.3g}, "
               f"fixed-point residual {float(np.max(np.abs(residual))):.2e}.")
    return EXIT_OK, summary


def _cmd_simulate(config: RunConfig, out: Path) -> tuple[int, str]:
    model = _load_market(config)
    system = as_scalar_system(model)
    finals = {}
    for seed in config.seeds:
        path = simulate_path(system, config.x0, model.chain.stream(seed), config.horizon)
        path.to_csv(out / f"path_seed{seed}.csv")
        finals[str(seed)] = float(path.values[-1])
    _write_report(out, {"final_values": finals, "initial": config.x0}, config)
    return EXIT_OK, (f"simulated {len(config.seeds)} path(s) of length "
                     f"{config.horizon} from x0 = {config.x0:g}.")


def _cmd_estimate_rate(config: RunConfig, out: Path) -> tuple[int, str]:
    model = _load_market(config)
    exact = lyapunov_exponent_exact(model)
    stream = model.chain.stream(config.seeds[0])

    def log_derivative(s0, s1):
        return math.log(derivative_at_zero(s0, s1, model))

    ladder = birkhoff_ladder(log_derivative, stream, config.horizon)
    _, rate, stderr = ladder[-1]
    band = config.margin * stderr
    if rate + band < 0.0:
        verdict = "certified-stable"
    elif rate - band > 0.0:
        verdict = "not-certified"
    else:
        verdict = "inconclusive"
    _write_csv(out / "rate_ladder.csv", ["t", "estimate", "stderr"], ladder)
    _write_report(out, {"rate": rate, "stderr": stderr, "gamma": None, "slope": None,
                        "verdict": verdict, "exact_rate": exact}, config)
    summary = (f"estimated growth rate {rate:.6g} (stderr {stderr:.2g}) against "
               f"exact {exact:.6g}; verdict {verdict}.")
    return EXIT_OK, summary


def _certificate_data(config: RunConfig, model: MarketModel):
    system = as_scalar_system(model)
    stream = model.chain.stream(config.seeds[0])
    data = lipschitz_from_derivative_sup(system, stream, delta=config.delta,
                                         grid=config.sup_samples,
                                         horizon=config.horizon)
    return system, data


def _cmd_basin(config: RunConfig, out: Path) -> tuple[int, str]:
    model = _load_market(config)
    system, data = _certificate_data(config, model)
    report = certify_contraction(system, data, margin=config.margin)
    basin = basin_radius(data)
    running = np.maximum.accumulate(basin_log_ratios(data))
    with np.errstate(over="ignore"):
        sigma_running = np.exp(np.minimum(running, 710.0))
    _write_csv(out / "basin.csv", ["t", "estimate", "stderr"],
               [(t, sigma_running[t], 0.0) for t in range(sigma_running.size)])
    payload = report.to_json_dict()
    payload.update({"sigma": basin.sigma, "gamma": basin.gamma,
                    "stabilized": basin.stabilized, "ball_radius": config.delta})
    _write_report(out, payload, config)
    code = EXIT_OK if report.certified else EXIT_NOT_CERTIFIED
    summary = (f"contraction rate {report.rate_c:.6g} "
               f"(stderr {report.rate_stderr:.2g}) on radius {config.delta:g}; "
               f"verdict {report.verdict}; basin radius gamma = {basin.gamma:.6g}"
               f" (sup {'stabilized' if basin.stabilized else 'still growing'}).")
    return code, summary


def _cmd_certify(config: RunConfig, out: Path) -> tuple[int, str]:
    model = _load_market(config)
    exact = lyapunov_exponent_exact(model)
    evolution = evolutionary_stability_report(model, config.x0, config.horizon,
                                              config.seeds)
    system, data = _certificate_data(config, model)
    contraction = certify_contraction(system, data, margin=config.margin)
    certified = evolution.certified and contraction.certified
    verdict = CERTIFIED if certified else evolution.verdict
    rows = [(row["seed"], row["slope"] if row["slope"] is not None else math.nan,
             exact, row["verdict"]) for row in evolution.meta.get("seeds", [])]
    _write_csv(out / "slopes.csv", ["seed", "slope", "c_exact", "verdict"],
               [(str(seed), slope, c, v) for seed, slope, c, v in rows])
    slope = None if evolution.slope_fit is None else evolution.slope_fit.slope
    _write_report(out, {
        "rate": exact, "stderr": 0.0, "gamma": contraction.gamma_estimate,
        "slope": slope, "verdict": verdict,
        "contraction": {"rate": contraction.rate_c,
                        "stderr": contraction.rate_stderr,
                        "verdict": contraction.verdict,
                        "ball_radius": config.delta},
        "seeds": evolution.meta.get("seeds", []),
    }, config)
    code = EXIT_OK if certified else EXIT_NOT_CERTIFIED
    gamma_text = ("n/a" if contraction.gamma_estimate is None
                  else f"{contraction.gamma_estimate:.4g}")
    summary = (f"exact rate {exact:.6g}; worst seed slope "
               f"{'n/a' if slope is None else format(slope, '.6g')}; "
               f"local contraction {contraction.verdict} "
               f"(rate {contraction.rate_c:.4g} on radius {config.delta:g}); "
               f"basin radius gamma = {gamma_text}; overall verdict {verdict}.")
    return code, summary


def _cmd_holder(config: RunConfig, out: Path) -> tuple[int, str]:
    model = _load_market(config)
    system = as_scalar_system(model)
    stream = model.chain.stream(config.seeds[0])
    result = check_holder(system, steps=config.compose, exponent=config.exponent,
                          stream=stream, kappa=config.kappa,
                          samples=config.sup_samples,
                          horizon=min(config.horizon, 500))
    _write_csv(out / "holder.csv", ["t", "estimate", "stderr"],
               [(t, result.H_values[t], 0.0) for t in range(result.H_values.size)])
    _write_report(out, {
        "satisfied": result.satisfied,
        "mean_abs_log_H": result.mean_abs_log_H,
        "H_max": float(result.H_values.max()) if result.H_values.size else None,
        "witness": list(result.witness) if result.witness else None,
        "steps": config.compose, "exponent": config.exponent, "kappa": config.kappa,
    }, config)
    code = EXIT_OK if result.satisfied else EXIT_NOT_CERTIFIED
    summary = (f"sampled {config.compose}-step ratios at exponent "
               f"{config.exponent:g} within radius {config.kappa:g}: "
               f"{'satisfied' if result.satisfied else 'NOT satisfied'} "
               f"(mean |ln H| = {result.mean_abs_log_H:.4g}).")
    return code, summary


def _cmd_fk_ladder(config: RunConfig, out: Path) -> tuple[int, str]:
    model = _load_market(config)
    if not check_kelly_positive(model).passes:
        raise ValidationError("a benchmark weight is zero; the linearized "
                              "cocycle is undefined")

    def step(s0, s1):
        return derivative_at_zero(s0, s1, model)

    cocycle = product_cocycle_from_step(step)
    ladder = furstenberg_kesten_ladder(cocycle, model.chain.stream(config.seeds[0]),
                                       t_max=config.horizon, replicas=config.replicas)
    _write_csv(out / "fk.csv", ["t", "estimate", "stderr"], list(ladder.rows()))
    _write_report(out, {"rate": ladder.final, "stderr": float(ladder.stderrs[-1]),
                        "gamma": None, "slope": None, "verdict": "estimate",
                        "running_infimum": ladder.running_inf.tolist(),
                        "exact_rate": lyapunov_exponent_exact(model)}, config)
    return EXIT_OK, (f"growth-rate ladder over {config.replicas} replicas up to "
                     f"t = {config.horizon}: final infimum {ladder.final:.6g}.")


_DISPATCH = {
    "solve-kelly": _cmd_solve_kelly,
    "simulate": _cmd_simulate,
    "estimate-rate": _cmd_estimate_rate,
    "basin": _cmd_basin,
    "certify": _cmd_certify,
    "holder": _cmd_holder,
    "fk-ladder": _cmd_fk_ladder,
}


def run(config: RunConfig) -> int:
    """Execute one command; returns the process exit code."""
    out = Path(config.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        code, summary = _DISPATCH[config.command](config, out)
    except ConfigError as exc:
        for diag in exc.diagnostics:
            print(f"error: {diag}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValidationError, UsageError, DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, EstimationError, FloatingPointError,
            ZeroDivisionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(summary)
    return code


def _parse_seeds(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in raw.split(",") if part.strip() != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {raw!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rdstab",
        description="Simulation and stability certification for randomly "
                    "perturbed systems on finite Markov environments.")
    parser.add_argument("--version", action="version", version=f"rdstab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "solve-kelly": "solve the benchmark (generalized Kelly) strategy",
        "simulate": "simulate wealth-ratio paths and export them as CSV",
        "estimate-rate": "Birkhoff estimate of the growth rate at the equilibrium",
        "basin": "contraction certificate and basin radius on a sampled ball",
        "certify": "full evolutionary-stability certificate over a seed suite",
        "holder": "sample iterated-map ratios near the equilibrium path",
        "fk-ladder": "growth-rate ladder for the linearized cocycle",
    }
    for name in COMMANDS:
        cmd = sub.add_parser(name, help=descriptions[name])
        cmd.add_argument("--model", required=True, help="path to the JSON model file")
        cmd.add_argument("--out", required=True, help="output directory")
        cmd.add_argument("--horizon", type=int, default=10_000)
        cmd.add_argument("--seeds", type=_parse_seeds, default=(1,),
                         help="comma-separated seed list, e.g. 1,2,3")
        cmd.add_argument("--sup-samples", type=int, default=64, dest="sup_samples",
                         help="sample points per ball for sampled suprema")
        cmd.add_argument("--margin", type=float, default=3.0,
                         help="standard-error multiple required for certification")
        cmd.add_argument("--delta", type=float, default=0.01,
                         help="ball radius for the sampled contraction certificate")
        cmd.add_argument("--x0", type=float, default=1e-3,
                         help="initial wealth ratio for simulations")
        cmd.add_argument("--compose", type=int, default=4,
                         help="composition steps for the holder command")
        cmd.add_argument("--exponent", type=float, default=1.0,
                         help="ratio exponent for the holder command")
        cmd.add_argument("--kappa", type=float, default=0.01,
                         help="sampling radius for the holder command")
        cmd.add_argument("--replicas", type=int, default=32,
                         help="Monte Carlo replicas for fk-ladder")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig(**vars(args))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
