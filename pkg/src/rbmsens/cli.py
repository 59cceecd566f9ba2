"""Command line front end.

One scenario file (or a named builtin) drives every command:

    rbmsens --config builtin:halfline --command check
    rbmsens --config scen.cfg --command sensitivity --out report.csv

Commands: check, simulate, stationary, sensitivity, contraction,
lyapunov, sweep.  Exit codes: 0 success, 2 configuration problems,
3 geometry rejection (including unstable drift), 4 non-convergence,
5 estimator misuse.  CSV bodies contain no timestamps, so identical
runs produce byte-identical files.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import ScenarioConfig, builtin_scenario, load_config
from .derivative import delta0_probes
from .errors import (ConfigError, ConvergenceError, DomainError,
                     EstimationError, GeometryError, RbmError)
from .estimators import (REPORT_CSV_HEADER, SensitivityReport, fd_oracle,
                         ipa_sensitivity, stationary_estimate,
                         write_report_csv)
from .geometry import (build_b_norm, drift_stability_check, perturbed_model,
                       validate_cone)
from .sim import simulate_joint, simulate_rbm, write_trajectory_csv
from .skorokhod import lyapunov_m

COMMANDS = ("check", "simulate", "stationary", "sensitivity", "contraction",
            "lyapunov", "sweep")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GEOMETRY = 3
EXIT_CONVERGENCE = 4
EXIT_ESTIMATION = 5


def _load_scenario(spec: str) -> ScenarioConfig:
    if spec.startswith("builtin:"):
        return builtin_scenario(spec.split(":", 1)[1])
    try:
        return load_config(spec)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {spec}") from None


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    sim = cfg.sim
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.paths is not None:
        updates["n_paths"] = args.paths
    if args.dt is not None:
        updates["dt"] = args.dt
    if updates:
        try:
            cfg = replace(cfg, sim=replace(sim, **updates))
        except ValueError as err:
            raise ConfigError(f"override rejected: {err}") from None
    return cfg


class _Output:
    """Route text to --out or stdout; never both."""

    def __init__(self, path: str | None):
        self.path = path

    def write(self, text: str) -> None:
        if self.path is None:
            sys.stdout.write(text)
        else:
            with open(self.path, "w", newline="") as fh:
                fh.write(text)

    def write_with(self, writer) -> None:
        if self.path is None:
            writer(sys.stdout)
        else:
            with open(self.path, "w", newline="") as fh:
                writer(fh)


def _cmd_check(cfg: ScenarioConfig, out: _Output) -> int:
    report = validate_cone(cfg.model)
    stable, w = drift_stability_check(cfg.model)
    lines = [report.summary()]
    lines.append(f"[{'ok' if stable else 'FAIL'}] drift-stable "
                 f"w={' '.join(f'{v:.6g}' for v in w)}")
    accepted = report.accepted and stable
    lines.append("accepted" if accepted else "rejected")
    out.write("\n".join(lines) + "\n")
    return EXIT_OK if accepted else EXIT_GEOMETRY


def _cmd_simulate(cfg: ScenarioConfig, out: _Output) -> int:
    trajs = simulate_joint(cfg.model, cfg.sim, x0=cfg.x0, j0=cfg.j0)
    if out.path is None:
        write_trajectory_csv(sys.stdout, trajs[0])
        if len(trajs) > 1:
            print(f"# {len(trajs) - 1} further paths not shown; "
                  "use --out to write every stream", file=sys.stderr)
        return EXIT_OK
    stem, dot, ext = out.path.rpartition(".")
    base = stem if dot else out.path
    suffix = f".{ext}" if dot else ""
    for p, traj in enumerate(trajs):
        target = out.path if p == 0 else f"{base}_p{p}{suffix}"
        write_trajectory_csv(target, traj)
    return EXIT_OK


def _cmd_stationary(cfg: ScenarioConfig, out: _Output) -> int:
    trajs = simulate_rbm(cfg.model, cfg.sim, x0=cfg.x0)
    estimate, stderr = stationary_estimate(cfg.functional(), trajs,
                                           burn_in=cfg.sim.burn_in)
    report = SensitivityReport(
        estimate=estimate, stderr=stderr, n_paths=cfg.sim.n_paths,
        method="stationary", horizon=cfg.sim.horizon, burn_in=cfg.sim.burn_in,
        dt=cfg.sim.dt, seed=cfg.sim.seed)
    out.write_with(lambda fh: write_report_csv(fh, [report]))
    return EXIT_OK


def _cmd_sensitivity(cfg: ScenarioConfig, out: _Output) -> int:
    functional = cfg.functional()
    trajs = simulate_joint(cfg.model, cfg.sim, x0=cfg.x0, j0=cfg.j0)
    reports = [ipa_sensitivity(functional, trajs, burn_in=cfg.sim.burn_in)]
    for eps in (cfg.fd_epsilon, cfg.fd_epsilon / 2.0):
        plus = perturbed_model(cfg.model, eps)
        minus = perturbed_model(cfg.model, -eps)
        for shifted in (plus, minus):
            shifted_report = validate_cone(shifted)
            if not shifted_report.accepted:
                raise GeometryError(
                    f"finite-difference shift epsilon={eps:g} leaves the "
                    "accepted regime; reduce fd_epsilon")
        reports.append(fd_oracle(plus, minus, functional, cfg.sim, eps))
    out.write_with(lambda fh: write_report_csv(fh, reports))
    return EXIT_OK


def _cmd_contraction(cfg: ScenarioConfig, out: _Output) -> int:
    report = validate_cone(cfg.model)
    if not report.accepted:
        raise GeometryError("model rejected; contraction probes are only "
                            "defined in the accepted regime:\n"
                            + report.summary())
    table = delta0_probes(cfg.model, n_sequences=200, seed=cfg.sim.seed)
    delta0 = max(value for _, value in table)

    def render(fh):
        fh.write(f"# delta0 = {delta0:.17g}\n")
        fh.write("sequence,norm\n")
        for seq, value in table:
            label = ">".join("+".join(str(i) for i in sorted(s)) for s in seq)
            fh.write(f"{label},{value:.17g}\n")

    out.write_with(render)
    return EXIT_OK


def _cmd_lyapunov(cfg: ScenarioConfig, out: _Output) -> int:
    value = lyapunov_m(cfg.model, cfg.x0, dt=cfg.sim.dt)
    out.write(f"return_time\n{value:.17g}\n")
    return EXIT_OK


def _cmd_sweep(cfg: ScenarioConfig, out: _Output) -> int:
    functional = cfg.functional()
    rows = []
    for offset in cfg.sweep_offsets:
        shifted = perturbed_model(cfg.model, offset)
        report = validate_cone(shifted)
        if not report.accepted:
            raise GeometryError(
                f"sweep offset {offset:g} leaves the accepted regime:\n"
                + report.summary())
        trajs = simulate_rbm(shifted, cfg.sim, x0=cfg.x0)
        estimate, stderr = stationary_estimate(functional, trajs,
                                               burn_in=cfg.sim.burn_in)
        rows.append((offset, SensitivityReport(
            estimate=estimate, stderr=stderr, n_paths=cfg.sim.n_paths,
            method="stationary", horizon=cfg.sim.horizon,
            burn_in=cfg.sim.burn_in, dt=cfg.sim.dt, seed=cfg.sim.seed)))

    def render(fh):
        fh.write("alpha," + REPORT_CSV_HEADER + "\n")
        for offset, report in rows:
            fh.write(f"{offset:.17g},{report.csv_row()}\n")

    out.write_with(render)
    return EXIT_OK


_HANDLERS = {
    "check": _cmd_check,
    "simulate": _cmd_simulate,
    "stationary": _cmd_stationary,
    "sensitivity": _cmd_sensitivity,
    "contraction": _cmd_contraction,
    "lyapunov": _cmd_lyapunov,
    "sweep": _cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rbmsens",
        description="Reflected Brownian motion: simulation and sensitivities.")
    parser.add_argument("--config", required=True,
                        help="scenario file, or builtin:<name> "
                             "(halfline, ortho2d, hr2d, hr2d_refl)")
    parser.add_argument("--command", required=True, choices=COMMANDS,
                        help="what to run")
    parser.add_argument("--out", default=None,
                        help="output file (stdout when omitted)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the scenario seed")
    parser.add_argument("--paths", type=int, default=None,
                        help="override the scenario path count")
    parser.add_argument("--dt", type=float, default=None,
                        help="override the scenario step size")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_scenario(args.config)
        cfg = _apply_overrides(cfg, args)
        return _HANDLERS[args.command](cfg, _Output(args.out))
    except ConfigError as err:
        for problem in err.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (GeometryError, DomainError) as err:
        print(f"geometry rejected: {err}", file=sys.stderr)
        return EXIT_GEOMETRY
    except ConvergenceError as err:
        print(f"did not converge: {err}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except EstimationError as err:
        print(f"estimation error: {err}", file=sys.stderr)
        return EXIT_ESTIMATION
    except RbmError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
