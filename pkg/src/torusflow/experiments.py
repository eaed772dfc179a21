"""Batch experiments: sweeps over shell index, viscosity, and step size.

Each experiment kind turns an ExperimentSpec into a ResultTable with a
fixed column layout, a row for every sweep cell and sample, and a summary
holding medians, quartiles, and the kind's control quantities.  Workers are
taken from the TORUSFLOW_WORKERS environment variable (default 1); results
are assembled in sweep order regardless of completion order, and every
random draw flows through the addressed generator streams, so the tables
are byte-identical across worker counts and replays.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import SimConfig, integrate, random_divergence_free
from .errors import IntegrationAborted, SimulationError, ValidationError
from .noise import BrownianDriver, corrector_limit_error
from .spectral import Grid

KINDS = ("corrector-convergence", "energy-audit", "decay", "scaling-limit", "survival")

COLUMNS = {
    "corrector-convergence": ("n", "j1", "j2", "j3", "sample", "error"),
    "energy-audit": ("dt", "sample", "defect"),
    "decay": ("t", "sample", "ratio"),
    "scaling-limit": ("n", "sample", "sup_distance"),
    "survival": ("n", "mu", "sample", "survived"),
}

__all__ = [
    "ExperimentSpec",
    "ResultTable",
    "load_experiment",
    "run_experiment",
    "run_corrector_convergence",
    "run_energy_audit",
    "run_decay",
    "run_scaling_limit",
    "run_survival",
    "write_outputs",
    "wilson_interval",
]


@dataclass
class ExperimentSpec:
    """Everything one experiment needs: kind, base config, sweeps, sampling.

    Config files mirror these fields one for one (TOML or JSON); the
    embedded SimConfig sits under the key "config".
    """

    kind: str
    config: SimConfig = dc_field(default_factory=SimConfig)
    n_values: Sequence[int] = (1, 2, 4, 8)
    mu_values: Sequence[float] = (1.0,)
    dt_values: Sequence[float] = (1e-3, 5e-4, 2.5e-4)
    j_values: Sequence[Sequence[int]] = ((1, 0, 0), (0, 1, 0), (1, 1, 0))
    samples: int = 1
    kmin: int = 1
    kmax: int = 3
    amplitude: float = 0.3
    r0: float = 0.4
    outdir: str = "runs"

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValidationError(f"rule 'kind known' violated: {self.kind!r} not in {KINDS}")
        if self.samples < 1:
            raise ValidationError(f"rule 'samples >= 1' violated: {self.samples}")
        if self.kind == "corrector-convergence":
            if self.samples != 1:
                raise ValidationError(
                    "rule 'corrector-convergence is deterministic' violated: "
                    f"samples must be 1, got {self.samples}"
                )
            for j in self.j_values:
                if len(j) != 3 or all(int(c) == 0 for c in j):
                    raise ValidationError(f"bad corrector mode {tuple(j)!r}")
            if not self.n_values:
                raise ValidationError("rule 'nonempty n sweep' violated")
        else:
            self.config.validate(check_window=(self.kind == "scaling-limit"))
        if self.kind == "scaling-limit":
            hi = self.config.gamma * (1.0 - 2.0 / self.config.p)
            if not (self.r0 < hi):
                raise ValidationError(
                    f"rule 'r0 < gamma (1 - 2/p)' violated: r0 = {self.r0}, bound = {hi}"
                )
        if self.kind == "survival" and self.config.guard_threshold is None:
            raise ValidationError("rule 'survival requires a guard threshold' violated")
        if not (1 <= self.kmin <= self.kmax):
            raise ValidationError(f"rule '1 <= kmin <= kmax' violated: [{self.kmin}, {self.kmax}]")
        if self.amplitude < 0:
            raise ValidationError(f"rule 'amplitude >= 0' violated: {self.amplitude}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.config.to_dict(),
            "n_values": [int(n) for n in self.n_values],
            "mu_values": [float(m) for m in self.mu_values],
            "dt_values": [float(d) for d in self.dt_values],
            "j_values": [[int(c) for c in j] for j in self.j_values],
            "samples": self.samples,
            "kmin": self.kmin,
            "kmax": self.kmax,
            "amplitude": self.amplitude,
            "r0": self.r0,
            "outdir": self.outdir,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown experiment fields: {sorted(unknown)}")
        doc = dict(doc)
        if "kind" not in doc:
            raise ValidationError("experiment config must set 'kind'")
        if "config" in doc:
            doc["config"] = SimConfig.from_dict(doc["config"])
        if "j_values" in doc:
            doc["j_values"] = [tuple(int(c) for c in j) for j in doc["j_values"]]
        return cls(**doc)


def load_experiment(path) -> ExperimentSpec:
    """Read an experiment config from a .toml or .json file."""
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"config file not found: {p}")
    suffix = p.suffix.lower()
    if suffix == ".toml":
        import tomli

        with open(p, "rb") as fh:
            doc = tomli.load(fh)
    elif suffix == ".json":
        with open(p) as fh:
            doc = json.load(fh)
    else:
        raise ValidationError(f"config must be .toml or .json, got {p.name!r}")
    return ExperimentSpec.from_dict(doc)


@dataclass
class ResultTable:
    """Rows plus summary for one experiment.

    rows is a list of tuples matching columns; summary holds only finite
    numbers (checked), nested dicts, strings, and booleans.
    """

    kind: str
    columns: tuple
    rows: list
    summary: dict
    expected_rows: int

    def __post_init__(self):
        if len(self.rows) != self.expected_rows:
            raise ValidationError(
                f"row count {len(self.rows)} != sweep size x samples = {self.expected_rows}"
            )
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValidationError(f"row width {len(row)} != {len(self.columns)} columns")
        _check_finite(self.summary, "summary")

    def to_csv(self, path) -> None:
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(_cell(x) for x in row))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _check_finite(obj, where: str) -> None:
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{where}.{k}")
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _check_finite(v, f"{where}[{i}]")
    elif isinstance(obj, (bool, str)) or obj is None:
        return
    elif isinstance(obj, (int, float, np.integer, np.floating)):
        if not math.isfinite(float(obj)):
            raise ValidationError(f"non-finite value in {where}: {obj}")
    else:
        raise ValidationError(f"unsupported summary entry at {where}: {type(obj)}")


def _worker_count() -> int:
    raw = os.environ.get("TORUSFLOW_WORKERS", "1")
    try:
        w = int(raw)
    except ValueError:
        raise ValidationError(f"TORUSFLOW_WORKERS must be an integer, got {raw!r}")
    if w < 1:
        raise ValidationError(f"TORUSFLOW_WORKERS must be >= 1, got {w}")
    return w


def _run_jobs(jobs: Sequence[tuple], fns: Sequence[Callable]):
    """Run the callables, return results in the order of the job keys."""
    workers = _worker_count()
    results = {}
    if workers == 1:
        for key, fn in zip(jobs, fns):
            results[key] = fn()
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(fn): key for key, fn in zip(jobs, fns)}
            for fut in as_completed(futures):
                results[futures[fut]] = fut.result()
    return [results[key] for key in jobs]


def _quartiles(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    return {
        "q1": float(np.percentile(v, 25)),
        "median": float(np.median(v)),
        "q3": float(np.percentile(v, 75)),
    }


def wilson_interval(successes: int, total: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial frequency."""
    if total < 1:
        raise ValidationError("Wilson interval needs at least one trial")
    phat = successes / total
    z2 = z * z
    denom = 1.0 + z2 / total
    center = (phat + z2 / (2 * total)) / denom
    half = z * math.sqrt(phat * (1 - phat) / total + z2 / (4 * total * total)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


# ---------------------------------------------------------------------------
# Experiment kinds

def run_corrector_convergence(spec: ExperimentSpec) -> ResultTable:
    """Lattice truncation error of the corrector against its n -> inf limit.

    One row per (n, j): the relative distance between the exact lattice sum
    at shell index n and the limiting operator, evaluated on a unit vector
    orthogonal to j picked by the lowest-axis rule.  Deterministic, so
    samples must equal 1.  The summary fits one log-log slope per j and
    reports the spread between coordinate-permuted modes.
    """
    spec.validate()
    if spec.kind != "corrector-convergence":
        raise ValidationError(f"wrong kind for this runner: {spec.kind}")
    mu = spec.config.mu
    alpha = spec.config.theta_alpha
    jobs = []
    fns = []
    for n in spec.n_values:
        for j in spec.j_values:
            jt = tuple(int(c) for c in j)
            jobs.append((int(n), jt))
            fns.append(
                lambda n=int(n), jt=jt: corrector_limit_error(
                    jt, _orth_unit(jt), n, mu=mu, alpha_decay=alpha
                )
            )
    errors = _run_jobs(jobs, fns)
    rows = [
        (n, j[0], j[1], j[2], 0, err)
        for (n, j), err in zip(jobs, errors)
    ]
    by_j: dict = {}
    for (n, j), err in zip(jobs, errors):
        by_j.setdefault(j, []).append((n, err))
    slopes = {}
    for j, pairs in by_j.items():
        if len(pairs) >= 2:
            ns = np.log([p[0] for p in pairs])
            es = np.log([max(p[1], 1e-300) for p in pairs])
            slopes[_jkey(j)] = float(np.polyfit(ns, es, 1)[0])
    sym = None
    perm_keys = [j for j in by_j if sorted(map(abs, j)) == [0, 0, 1]]
    if len(perm_keys) >= 2:
        ref = np.array([e for _, e in sorted(by_j[perm_keys[0]])])
        worst = 0.0
        for j in perm_keys[1:]:
            other = np.array([e for _, e in sorted(by_j[j])])
            worst = max(worst, float(np.max(np.abs(other - ref) / np.maximum(ref, 1e-300))))
        sym = worst
    summary = {
        "slopes": slopes,
        "errors_by_n": {
            str(n): float(np.median([e for (nn, _), e in zip(jobs, errors) if nn == n]))
            for n in spec.n_values
        },
    }
    if sym is not None:
        summary["axis_permutation_rel_spread"] = sym
    expected = len(spec.n_values) * len(spec.j_values) * spec.samples
    return ResultTable("corrector-convergence", COLUMNS[spec.kind], rows, summary, expected)


def _orth_unit(j: tuple) -> np.ndarray:
    jf = np.array(j, dtype=np.float64)
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = 1.0
        c = np.cross(jf, e)
        if np.linalg.norm(c) > 0:
            return c / np.linalg.norm(c)
    raise ValidationError("corrector mode must be nonzero")


def _jkey(j: tuple) -> str:
    return ",".join(str(c) for c in j)


def run_energy_audit(spec: ExperimentSpec) -> ResultTable:
    """Terminal energy-identity defect across a dt sweep.

    Each row is the signed relative defect of one sample at one step size;
    initial data is drawn per sample and shared across the sweep.  The
    summary carries medians and quartiles per dt, the ratio of successive
    medians of |defect|, a linear control (the same march with the noise
    off, which must close the deterministic energy identity to round-off
    because the linear substep is integrated exactly), and a replay
    cross-check rerunning the first cell.
    """
    spec.validate()
    if spec.kind != "energy-audit":
        raise ValidationError(f"wrong kind for this runner: {spec.kind}")
    base = spec.config
    grid = Grid(base.N)
    driver = BrownianDriver(base.seed)

    def defect_for(dt: float, sample: int) -> float:
        cfg = replace(base, dt=dt, mode="stochastic")
        v0 = random_divergence_free(grid, driver, sample, spec.kmin, spec.kmax, spec.amplitude)
        rec = integrate(cfg, v0, sample=sample, driver=driver)
        return float(rec.energy_defect[-1])

    jobs = [(float(dt), s) for dt in spec.dt_values for s in range(spec.samples)]
    fns = [lambda dt=dt, s=s: defect_for(dt, s) for dt, s in jobs]
    defects = _run_jobs(jobs, fns)
    rows = [(dt, s, d) for (dt, s), d in zip(jobs, defects)]

    by_dt: dict = {}
    for (dt, _), d in zip(jobs, defects):
        by_dt.setdefault(dt, []).append(d)
    med_abs = {dt: float(np.median(np.abs(ds))) for dt, ds in by_dt.items()}
    dts = [float(d) for d in spec.dt_values]
    ratios = [
        med_abs[dts[i]] / max(med_abs[dts[i + 1]], 1e-300)
        for i in range(len(dts) - 1)
    ]

    control_cfg = replace(
        base, dt=dts[0], mode="deterministic", theta_n=None, theta_spectrum=None,
        nonlinearity_on=False, mu_eff_factor=0.0,
    )
    v0 = random_divergence_free(grid, driver, 0, spec.kmin, spec.kmax, spec.amplitude)
    control = integrate(control_cfg, v0)
    control_defect = float(np.max(np.abs(control.energy_defect)))

    replay = defect_for(*jobs[0])
    summary = {
        "median_abs_defect_by_dt": {repr(dt): med_abs[dt] for dt in dts},
        "quartiles_by_dt": {repr(dt): _quartiles(by_dt[dt]) for dt in dts},
        "halving_ratios": ratios,
        "control_defect": control_defect,
        "replay_identical": bool(replay == defects[0]),
    }
    expected = len(spec.dt_values) * spec.samples
    return ResultTable("energy-audit", COLUMNS[spec.kind], rows, summary, expected)


def run_decay(spec: ExperimentSpec) -> ResultTable:
    """Energy decay against the slowest linear rate.

    Rows hold ratio(t) = ||v(t)||^2 e^t / ||v(0)||^2 for every recorded time
    and sample (zero initial data gives ratio 0 by convention).  Since the
    spectral gap of the dissipation is 1 on mean-zero fields and every other
    term is energy-neutral, the ratio stays at or below 1 up to
    discretization slack; the summary reports its maximum.
    """
    spec.validate()
    if spec.kind != "decay":
        raise ValidationError(f"wrong kind for this runner: {spec.kind}")
    base = spec.config
    grid = Grid(base.N)
    driver = BrownianDriver(base.seed)

    def ratios_for(sample: int):
        v0 = random_divergence_free(grid, driver, sample, spec.kmin, spec.kmax, spec.amplitude)
        rec = integrate(base, v0, sample=sample, driver=driver)
        e0 = rec.l2[0] ** 2
        if e0 == 0:
            return rec.times, np.zeros_like(rec.times)
        return rec.times, (rec.l2**2) * np.exp(rec.times) / e0

    jobs = list(range(spec.samples))
    fns = [lambda s=s: ratios_for(s) for s in jobs]
    results = _run_jobs(jobs, fns)
    lengths = {len(t) for t, _ in results}
    if len(lengths) != 1:
        raise SimulationError("decay samples recorded unequal time grids")
    rows = []
    for s, (times, ratios) in zip(jobs, results):
        for t, rr in zip(times, ratios):
            rows.append((float(t), s, float(rr)))
    finals = [float(r[-1]) for _, r in results]
    all_ratios = np.concatenate([r for _, r in results])
    summary = {
        "max_ratio": float(np.max(all_ratios)),
        "final_ratio_quartiles": _quartiles(finals),
        "recorded_times": len(results[0][0]),
    }
    expected = len(results[0][0]) * spec.samples
    return ResultTable("decay", COLUMNS[spec.kind], rows, summary, expected)


def run_scaling_limit(spec: ExperimentSpec) -> ResultTable:
    """Distance from stochastic-cutoff runs to the effective deterministic run.

    One shared initial field.  The reference marches the deterministic
    equation with effective viscosity mu_eff = (3/5) mu and snapshots on the
    cadence grid; the cutoff radius is taken from the config or, when unset,
    fixed at 1.5x the largest H^r norm along the reference so the cutoff
    reads exactly 1 there.  Each row is sup_t ||v_n(t) - v_ref(t)||_{H^r0}
    for one stochastic sample at one shell index.  The summary adds medians
    per n and a no-viscosity control distance (the same reference march with
    mu_eff = 0), which does not shrink with n.
    """
    spec.validate()
    if spec.kind != "scaling-limit":
        raise ValidationError(f"wrong kind for this runner: {spec.kind}")
    base = spec.config
    grid = Grid(base.N)
    driver = BrownianDriver(base.seed)
    v0 = random_divergence_free(grid, driver, 0, spec.kmin, spec.kmax, spec.amplitude)

    ref_cfg = replace(
        base, mode="deterministic", theta_n=None, theta_spectrum=None,
        mu_eff_factor=0.6, keep_snapshots=True, cutoff_R=None, guard=None,
    )
    ref = integrate(ref_cfg, v0)
    hr_max = float(np.max(ref.hr))
    R = base.cutoff_R if base.cutoff_R is not None else 1.5 * hr_max
    if hr_max > R:
        raise ValidationError(
            f"reference run leaves the cutoff plateau: max H^r = {hr_max} > R = {R}"
        )
    wt = (1.0 + grid.k2.astype(np.float64)) ** spec.r0

    control_cfg = replace(ref_cfg, mu_eff_factor=0.0)
    control = integrate(control_cfg, v0)

    def sup_distance(snapshots, times) -> float:
        if len(snapshots) != len(ref.snapshots):
            raise SimulationError("cadence grids of reference and sample differ")
        worst = 0.0
        for a, b in zip(snapshots, ref.snapshots):
            d = float(np.sqrt(np.sum(wt[..., None] * np.abs(a - b) ** 2)))
            worst = max(worst, d)
        return worst

    def run_one(n: int, sample: int) -> float:
        cfg = replace(
            base, mode="stochastic-cutoff", theta_n=int(n), theta_spectrum=None,
            cutoff_R=R, keep_snapshots=True, guard=None, mu_eff_factor=0.0,
        )
        rec = integrate(cfg, v0, sample=sample, driver=driver)
        return sup_distance(rec.snapshots, rec.times)

    jobs = [(int(n), s) for n in spec.n_values for s in range(spec.samples)]
    fns = [lambda n=n, s=s: run_one(n, s) for n, s in jobs]
    distances = _run_jobs(jobs, fns)
    rows = [(n, s, d) for (n, s), d in zip(jobs, distances)]

    by_n: dict = {}
    for (n, _), d in zip(jobs, distances):
        by_n.setdefault(n, []).append(d)
    control_distance = float(
        max(
            np.sqrt(np.sum(wt[..., None] * np.abs(a - b) ** 2))
            for a, b in zip(control.snapshots, ref.snapshots)
        )
    )
    summary = {
        "median_by_n": {str(n): float(np.median(ds)) for n, ds in by_n.items()},
        "quartiles_by_n": {str(n): _quartiles(ds) for n, ds in by_n.items()},
        "cutoff_R": float(R),
        "reference_hr_max": hr_max,
        "no_viscosity_control_distance": control_distance,
    }
    expected = len(spec.n_values) * spec.samples
    return ResultTable("scaling-limit", COLUMNS[spec.kind], rows, summary, expected)


def run_survival(spec: ExperimentSpec) -> ResultTable:
    """Guarded no-blow-up frequencies across (n, mu) cells.

    The cutoff stays disabled; each run either reaches T with the H^r norm
    under the guard (survived = 1) or stops at the guard, aborts on
    non-finite values, or trips the nonlinear growth rule (survived = 0).
    The summary carries a Wilson interval per cell.
    """
    spec.validate()
    if spec.kind != "survival":
        raise ValidationError(f"wrong kind for this runner: {spec.kind}")
    base = spec.config
    grid = Grid(base.N)
    driver = BrownianDriver(base.seed)

    def run_one(n: Optional[int], mu: float, sample: int) -> int:
        cfg = replace(
            base, mode="stochastic", theta_n=n, theta_spectrum=None,
            mu=mu, cutoff_R=None, guard=spec.config.guard_threshold,
        )
        v0 = random_divergence_free(grid, driver, sample, spec.kmin, spec.kmax, spec.amplitude)
        try:
            rec = integrate(cfg, v0, sample=sample, driver=driver)
        except (IntegrationAborted, SimulationError):
            return 0
        return 0 if rec.blown_up else 1

    jobs = [
        (int(n), float(mu), s)
        for n in spec.n_values
        for mu in spec.mu_values
        for s in range(spec.samples)
    ]
    fns = [lambda n=n, mu=mu, s=s: run_one(n, mu, s) for n, mu, s in jobs]
    outcomes = _run_jobs(jobs, fns)
    rows = [(n, mu, s, o) for (n, mu, s), o in zip(jobs, outcomes)]

    cells: dict = {}
    for (n, mu, _), o in zip(jobs, outcomes):
        cells.setdefault((n, mu), []).append(o)
    cell_summary = {}
    for (n, mu), outs in cells.items():
        good = int(sum(outs))
        lo, hi = wilson_interval(good, len(outs))
        cell_summary[f"{n},{repr(mu)}"] = {
            "survived": good,
            "total": len(outs),
            "frequency": good / len(outs),
            "wilson_low": lo,
            "wilson_high": hi,
        }
    summary = {"cells": cell_summary}
    expected = len(spec.n_values) * len(spec.mu_values) * spec.samples
    return ResultTable("survival", COLUMNS[spec.kind], rows, summary, expected)


RUNNERS = {
    "corrector-convergence": run_corrector_convergence,
    "energy-audit": run_energy_audit,
    "decay": run_decay,
    "scaling-limit": run_scaling_limit,
    "survival": run_survival,
}


def run_experiment(spec: ExperimentSpec) -> ResultTable:
    spec.validate()
    return RUNNERS[spec.kind](spec)


def write_outputs(table: ResultTable, spec: ExperimentSpec, outdir, tag: Optional[str] = None):
    """Write <kind>-<tag>.csv and .meta.json under outdir; returns the paths.

    tag defaults to a wall-clock stamp; pass one explicitly for replayable
    paths.  The metadata file holds the full spec, columns, and summary
    (sorted keys, no clocks), so reruns with the same tag are byte-stable.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    if tag is None:
        tag = time.strftime("%Y%m%d-%H%M%S")
    csv_path = out / f"{table.kind}-{tag}.csv"
    meta_path = out / f"{table.kind}-{tag}.meta.json"
    table.to_csv(csv_path)
    from . import __version__

    meta = {
        "kind": table.kind,
        "spec": spec.to_dict(),
        "columns": list(table.columns),
        "summary": table.summary,
        "rows": len(table.rows),
        "version": __version__,
    }
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, meta_path
