"""Command line entry points.

Subcommands map onto the experiment kinds plus three utilities:

* simulate: one trajectory to CSV;
* corrector / energy / decay / scaling-limit / survival: the batch
  experiments, each writing <outdir>/<kind>-<tag>.csv and .meta.json;
* exponents: the exponent bundle for a given gamma, in exact form;
* validate: check a config file and name the first violated rule.

Configs are TOML or JSON files mirroring ExperimentSpec; any flag given on
the command line overrides the file.  Exit codes: 0 on success, 1 for
configuration and validation problems, 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

from . import __version__
from .dynamics import SimConfig, integrate, random_divergence_free, trajectory_to_csv
from .errors import SimulationError, ValidationError
from .experiments import (
    ExperimentSpec,
    load_experiment,
    run_experiment,
    write_outputs,
)
from .noise import BrownianDriver
from .spectral import Grid

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    """argparse that exits with the config-error code on bad flags."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


_KIND_BY_COMMAND = {
    "corrector": "corrector-convergence",
    "energy": "energy-audit",
    "decay": "decay",
    "scaling-limit": "scaling-limit",
    "survival": "survival",
}


def _default_spec(kind: str) -> ExperimentSpec:
    """Ready-to-run defaults per kind, sized for a workstation."""
    if kind == "corrector-convergence":
        return ExperimentSpec(
            kind=kind,
            config=SimConfig(mu=1.0, theta_alpha=1.0),
            n_values=(2, 4, 8, 16),
            samples=1,
        )
    if kind == "energy-audit":
        return ExperimentSpec(
            kind=kind,
            config=SimConfig(
                N=32, gamma=1.125, mode="stochastic", theta_n=2, mu=0.1,
                T=0.25, dt=1e-3, nonlinearity_on=False, record_every=50,
            ),
            dt_values=(1e-3, 5e-4, 2.5e-4),
            samples=8,
            kmin=1, kmax=3, amplitude=0.3,
        )
    if kind == "decay":
        return ExperimentSpec(
            kind=kind,
            config=SimConfig(
                N=32, gamma=1.125, mode="stochastic", theta_n=1, mu=0.05,
                T=1.0, dt=1e-3, record_every=10,
            ),
            samples=8,
            kmin=2, kmax=3, amplitude=0.35,
        )
    if kind == "scaling-limit":
        return ExperimentSpec(
            kind=kind,
            config=SimConfig(
                N=32, gamma=1.125, mode="stochastic", mu=0.3, T=0.5, dt=1e-3,
                r=0.3, p=4.0, record_every=10,
            ),
            n_values=(2, 4),
            samples=8,
            r0=0.4,
            kmin=1, kmax=3, amplitude=0.3,
        )
    if kind == "survival":
        return ExperimentSpec(
            kind=kind,
            config=SimConfig(
                N=32, gamma=1.125, mode="stochastic", T=0.25, dt=1e-3,
                guard=5.0, record_every=25,
            ),
            n_values=(1, 2, 4),
            mu_values=(1.0,),
            samples=4,
            kmin=1, kmax=3, amplitude=0.3,
        )
    raise ValidationError(f"no defaults for kind {kind!r}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML or JSON experiment config")
    p.add_argument("--outdir", help="output directory (default from config)")
    p.add_argument("--tag", help="output name tag (default: wall-clock stamp)")
    p.add_argument("--samples", type=int, help="samples per sweep cell")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--N", type=int, help="grid size")
    p.add_argument("--gamma", type=float, help="dissipation exponent")
    p.add_argument("--mu", type=float, help="transport intensity")
    p.add_argument("--dt", type=float, help="step size")
    p.add_argument("--T", type=float, help="final time")
    p.add_argument("--theta-n", type=int, dest="theta_n", help="shell index")
    p.add_argument("--amplitude", type=float, help="initial L2 norm")
    p.add_argument("--kmin", type=int, help="initial band lower limit")
    p.add_argument("--kmax", type=int, help="initial band upper limit")
    p.add_argument("--n-values", dest="n_values", help="comma list of shell indices")
    p.add_argument("--mu-values", dest="mu_values", help="comma list of intensities")
    p.add_argument("--dt-values", dest="dt_values", help="comma list of step sizes")
    p.add_argument("--r0", type=float, help="comparison norm exponent")
    p.add_argument("--guard", type=float, help="blow-up guard threshold")


def _ints(text: str):
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ValidationError(f"expected a comma list of integers, got {text!r}")


def _floats(text: str):
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ValidationError(f"expected a comma list of numbers, got {text!r}")


def _spec_from_args(kind: str, args) -> ExperimentSpec:
    if args.config:
        spec = load_experiment(args.config)
        if spec.kind != kind:
            raise ValidationError(
                f"config file is for kind {spec.kind!r}, command expects {kind!r}"
            )
    else:
        spec = _default_spec(kind)
    cfg_over = {}
    for name in ("seed", "N", "gamma", "mu", "dt", "T", "theta_n", "guard"):
        val = getattr(args, name, None)
        if val is not None:
            cfg_over[name] = val
    if cfg_over:
        spec.config = replace(spec.config, **cfg_over)
    for name in ("samples", "outdir", "amplitude", "kmin", "kmax", "r0"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(spec, name, val)
    if getattr(args, "n_values", None):
        spec.n_values = _ints(args.n_values)
    if getattr(args, "mu_values", None):
        spec.mu_values = _floats(args.mu_values)
    if getattr(args, "dt_values", None):
        spec.dt_values = _floats(args.dt_values)
    return spec


def _cmd_experiment(kind: str, args) -> int:
    spec = _spec_from_args(kind, args)
    spec.validate()
    table = run_experiment(spec)
    csv_path, meta_path = write_outputs(table, spec, args.outdir or spec.outdir, args.tag)
    print(f"wrote {csv_path}")
    print(f"wrote {meta_path}")
    for key, val in table.summary.items():
        print(f"{key}: {val}")
    return 0


def _cmd_simulate(args) -> int:
    if args.config:
        spec = load_experiment(args.config)
    else:
        spec = ExperimentSpec(kind="decay", config=SimConfig())
    cfg_over = {}
    for name in ("seed", "N", "gamma", "mu", "dt", "T", "theta_n", "guard"):
        val = getattr(args, name, None)
        if val is not None:
            cfg_over[name] = val
    if cfg_over:
        spec.config = replace(spec.config, **cfg_over)
    for name in ("amplitude", "kmin", "kmax", "outdir"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(spec, name, val)
    cfg = spec.config
    cfg.validate()
    grid = Grid(cfg.N)
    driver = BrownianDriver(cfg.seed)
    v0 = random_divergence_free(grid, driver, 0, spec.kmin, spec.kmax, spec.amplitude)
    rec = integrate(cfg, v0, driver=driver)
    out = Path(args.outdir or spec.outdir)
    out.mkdir(parents=True, exist_ok=True)
    tag = args.tag
    if tag is None:
        tag = time.strftime("%Y%m%d-%H%M%S")
    csv_path = out / f"simulate-{tag}.csv"
    meta_path = out / f"simulate-{tag}.meta.json"
    trajectory_to_csv(rec, csv_path)
    meta = {
        "config": cfg.to_dict(),
        "rows": len(rec.times),
        "blown_up": rec.blown_up,
        "blowup_step": rec.blowup_step,
        "initial": {"kmin": spec.kmin, "kmax": spec.kmax, "amplitude": spec.amplitude},
        "version": __version__,
    }
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {csv_path}")
    print(f"wrote {meta_path}")
    return 0


def _exact(x: Fraction) -> str:
    """Both exact forms: the reduced fraction and its decimal value."""
    return f"{x} (= {float(x)})"


def _cmd_exponents(args) -> int:
    try:
        g = Fraction(args.gamma)
    except (ValueError, ZeroDivisionError):
        raise ValidationError(f"cannot parse gamma {args.gamma!r}")
    if g <= 1:
        raise ValidationError(f"rule 'gamma > 1' violated: gamma = {args.gamma}")
    delta = Fraction(5, 2) - 2 * g
    p_c = 4 * g / (6 * g - 5)
    beta = Fraction(5, 4) - g / 2
    print(f"gamma = {_exact(g)}")
    print(f"delta = {_exact(delta)}")
    print(f"p_critical = {_exact(p_c)}")
    print(f"beta = {_exact(beta)}")
    if args.p is not None:
        try:
            p = Fraction(args.p)
        except (ValueError, ZeroDivisionError):
            raise ValidationError(f"cannot parse p {args.p!r}")
        if p <= 1:
            raise ValidationError(f"rule 'p > 1' violated: p = {args.p}")
        b0 = g * (1 - 1 / p)
        print(f"beta0({args.p}) = {_exact(b0)}")
    return 0


def _cmd_validate(args) -> int:
    spec = load_experiment(args.config)
    spec.validate()
    print(f"ok: {args.config} is a valid {spec.kind} config")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="torusflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one trajectory to CSV")
    _add_common(p)
    p.set_defaults(func=_cmd_simulate)

    for cmd, kind in _KIND_BY_COMMAND.items():
        p = sub.add_parser(cmd, help=f"run the {kind} experiment")
        _add_common(p)
        p.set_defaults(func=lambda a, kind=kind: _cmd_experiment(kind, a))

    p = sub.add_parser("exponents", help="print the exponent bundle for gamma")
    p.add_argument("--gamma", required=True, help="dissipation exponent, e.g. 1.125 or 9/8")
    p.add_argument("--p", help="optionally evaluate beta0 at this integrability")
    p.set_defaults(func=_cmd_exponents)

    p = sub.add_parser("validate", help="check a config file")
    p.add_argument("--config", required=True, help="TOML or JSON experiment config")
    p.set_defaults(func=_cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SimulationError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
