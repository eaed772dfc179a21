"""Time integration of the hyperviscous systems and their diagnostics.

Three systems share one marching kernel:

* deterministic: dv/dt + N(v) + (w . grad) v + (-Delta)^gamma v
  = mu_eff Delta v, with mu_eff = mu_eff_factor * mu realized spectrally as
  extra damping mu_eff (2 pi)^2 |k|^2;
* stochastic (Ito form): the same drift with mu_eff = 0 plus the corrector
  C_theta v dt and the transport noise increment;
* stochastic-cutoff: the nonlinearity scaled by phi(R^-1 ||v||_{H^r}).

Scheme.  The stiff linear symbol lambda(k) = |k|^(2 gamma)
+ mu_eff (2 pi)^2 |k|^2 and the corrector (a per-mode 3x3 map, itself stiff
at the default parameters) are integrated exactly by precomputed exponential
factors; the nonlinear and constant-drift terms enter by an explicit
exponential-Euler stage evaluated at the damped state, and the noise
increment is added there too (Euler-Maruyama).  Per-mode second moments are
nonincreasing for the linear-plus-noise part at any dt, because the kick
variance the noise injects is exactly what the corrector flow removed to
first order and the remainder has a sign.  An optional two-stage
second-order variant (scheme "etd2") is available for deterministic runs.

The mean mode is never written by any term (the noise amplitude at output
zero vanishes and every other term carries a factor of k), so the integrator
evolves the mean-zero fluctuation with the constant drift w = cfg.drift
+ mean(v0) and restores the mean at the end, following the mean-shift
reduction.

Energy bookkeeping.  The energy_defect diagnostic is
(E(t) + D(t) - E(0)) / E(0) where D accumulates, step by step, the exact
energy removed by the gamma / mu_eff damping substep.  For a linear run the
defect is zero to round-off; for stochastic runs it measures the
discretization error of the pathwise energy identity
E(t) + 2 int_0^t ||(-Delta)^(gamma/2) v||^2 ds = E(0) and shrinks with dt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, replace
from typing import Optional, Sequence

import numpy as np
import scipy.fft

from .errors import IntegrationAborted, SimulationError, ValidationError
from .expm3 import expm_batch
from .noise import BrownianDriver, ThetaSpectrum, TransportNoise, theta_shell
from .spectral import (
    Grid,
    SpectralField,
    besov_norm,
    dealias,
    helmholtz_project,
    l2_norm,
    mean,
    sobolev_norm,
    subtract_mean,
)

__all__ = [
    "SimConfig",
    "TrajectoryRecord",
    "nonlinearity",
    "cutoff_factor",
    "step_deterministic",
    "step_stochastic",
    "integrate",
    "regularity_functionals",
    "critical_exponents",
    "CriticalExponents",
    "random_divergence_free",
    "trajectory_to_csv",
]

TWO_PI = 2.0 * np.pi

MODES = ("deterministic", "stochastic", "stochastic-cutoff")
SCHEMES = ("exp_euler", "etd2")

TRAJECTORY_COLUMNS = ("t", "L2", "Hr", "Hgamma", "Besov", "energy_defect", "cutoff_factor")


@dataclass
class SimConfig:
    """Run parameters for one trajectory.

    Fields follow the conventions of the module docstring; theta_n selects
    the shell spectrum theta_shell(theta_n, theta_alpha), theta_spectrum
    overrides it with an explicit spectrum, and theta_n = None turns the
    noise off entirely.  mu_eff_factor adds the deterministic effective
    viscosity mu_eff = mu_eff_factor * mu and must be zero in the stochastic
    modes (there the corrector plays that role).
    """

    N: int = 32
    gamma: float = 1.125
    mu: float = 1.0
    dt: float = 1e-3
    T: float = 1.0
    mode: str = "stochastic"
    theta_n: Optional[int] = 1
    theta_alpha: float = 1.0
    theta_spectrum: Optional[ThetaSpectrum] = None
    seed: int = 0
    drift: tuple = (0.0, 0.0, 0.0)
    mu_eff_factor: float = 0.0
    r: float = 0.3
    p: float = 4.0
    cutoff_R: Optional[float] = None
    guard: Optional[float] = None
    nonlinearity_on: bool = True
    scheme: str = "exp_euler"
    record_every: int = 10
    keep_snapshots: bool = False
    cfl_bound: float = 0.8
    stability_bound: float = 4.0

    def validate(self, check_window: bool = False) -> None:
        """Check every invariant, raising ValidationError with the rule named."""
        if self.dt <= 0:
            raise ValidationError(f"rule 'dt > 0' violated: dt = {self.dt}")
        if self.T < self.dt:
            raise ValidationError(f"rule 'T >= dt' violated: T = {self.T}, dt = {self.dt}")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-8 * max(1.0, steps):
            raise ValidationError(
                f"rule 'T integer multiple of dt' violated: T/dt = {steps}"
            )
        if self.gamma <= 1:
            raise ValidationError(f"rule 'gamma > 1' violated: gamma = {self.gamma}")
        if self.mu < 0 or not math.isfinite(self.mu):
            raise ValidationError(f"rule 'mu >= 0' violated: mu = {self.mu}")
        Grid(self.N)
        if self.mode not in MODES:
            raise ValidationError(f"rule 'mode known' violated: {self.mode!r} not in {MODES}")
        if self.scheme not in SCHEMES:
            raise ValidationError(f"rule 'scheme known' violated: {self.scheme!r}")
        if self.scheme == "etd2" and self.mode != "deterministic":
            raise ValidationError("rule 'etd2 is deterministic-only' violated")
        if self.record_every < 1:
            raise ValidationError(f"rule 'record_every >= 1' violated: {self.record_every}")
        if self.theta_n is not None:
            n = self.theta_n
            if not isinstance(n, (int, np.integer)) or n < 1:
                raise ValidationError(f"rule 'theta_n positive integer' violated: {n!r}")
            if self.N / 3 < 2 * n + 2:
                raise ValidationError(
                    f"rule 'N/3 >= 2n + 2' violated: N = {self.N}, n = {n}"
                )
        if self.mode in ("stochastic", "stochastic-cutoff") and self.mu_eff_factor != 0.0:
            raise ValidationError(
                "rule 'mu_eff_factor = 0 in stochastic modes' violated "
                "(the corrector supplies the effective viscosity)"
            )
        if self.mode == "stochastic-cutoff":
            if self.cutoff_R is None or self.cutoff_R <= 0:
                raise ValidationError(
                    f"rule 'cutoff requires R > 0' violated: R = {self.cutoff_R}"
                )
        if self.guard is not None and self.guard <= 0:
            raise ValidationError(f"rule 'guard > 0' violated: guard = {self.guard}")
        if check_window:
            lo = 2.5 - 2 * self.gamma
            hi = self.gamma * (1 - 2.0 / self.p)
            if not (lo < self.r < hi):
                raise ValidationError(
                    f"rule '5/2 - 2 gamma < r < gamma (1 - 2/p)' violated: "
                    f"need {lo} < r < {hi}, got r = {self.r}"
                )

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def theta(self) -> Optional[ThetaSpectrum]:
        """The active coefficient spectrum, or None when the noise is off."""
        if self.theta_spectrum is not None:
            return self.theta_spectrum
        if self.theta_n is None:
            return None
        return theta_shell(self.theta_n, self.theta_alpha)

    @property
    def guard_threshold(self) -> Optional[float]:
        if self.guard is not None:
            return self.guard
        if self.cutoff_R is not None:
            return 10.0 * self.cutoff_R
        return None

    def to_dict(self) -> dict:
        doc = {
            "N": self.N, "gamma": self.gamma, "mu": self.mu, "dt": self.dt,
            "T": self.T, "mode": self.mode, "theta_n": self.theta_n,
            "theta_alpha": self.theta_alpha, "seed": self.seed,
            "drift": list(self.drift), "mu_eff_factor": self.mu_eff_factor,
            "r": self.r, "p": self.p, "cutoff_R": self.cutoff_R,
            "guard": self.guard, "nonlinearity_on": self.nonlinearity_on,
            "scheme": self.scheme, "record_every": self.record_every,
            "keep_snapshots": self.keep_snapshots, "cfl_bound": self.cfl_bound,
            "stability_bound": self.stability_bound,
        }
        if self.theta_spectrum is not None:
            doc["theta_spectrum"] = self.theta_spectrum.to_json()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SimConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown SimConfig fields: {sorted(unknown)}")
        doc = dict(doc)
        if "drift" in doc:
            doc["drift"] = tuple(float(c) for c in doc["drift"])
        if "theta_spectrum" in doc and doc["theta_spectrum"] is not None:
            doc["theta_spectrum"] = ThetaSpectrum.from_json(doc["theta_spectrum"])
        return cls(**doc)


@dataclass
class TrajectoryRecord:
    """Diagnostics of one run, sampled on the recording cadence.

    Column semantics match trajectory_to_csv: L2, Hr, Hgamma are norms of
    the mean-zero fluctuation, Besov is taken at s = gamma (1 - 2/p),
    energy_defect is the relative defect of the pathwise energy identity,
    and cutoff_factor is phi applied to the recorded state (1.0 for runs
    without a cutoff).
    """

    times: np.ndarray
    l2: np.ndarray
    hr: np.ndarray
    hgamma: np.ndarray
    besov: np.ndarray
    energy_defect: np.ndarray
    cutoff: np.ndarray
    config: SimConfig
    mean_velocity: np.ndarray
    final: SpectralField
    blown_up: bool = False
    blowup_step: Optional[int] = None
    snapshots: Optional[list] = None

    def __post_init__(self):
        if len(self.times) == 0:
            raise ValidationError("trajectory record must contain at least one sample")
        if np.any(np.diff(self.times) <= 0):
            raise ValidationError("sample times must be strictly increasing")
        for name in ("l2", "hr", "hgamma", "besov"):
            if np.any(np.asarray(getattr(self, name)) < 0):
                raise ValidationError(f"negative values in norm column {name}")


def trajectory_to_csv(rec: TrajectoryRecord, path) -> None:
    """Write the record as CSV with the fixed column order.

    Columns: t, L2, Hr, Hgamma, Besov, energy_defect, cutoff_factor.
    Floats are written with repr for bit-exact replay comparisons.
    """
    lines = [",".join(TRAJECTORY_COLUMNS)]
    for i in range(len(rec.times)):
        row = (
            rec.times[i], rec.l2[i], rec.hr[i], rec.hgamma[i],
            rec.besov[i], rec.energy_defect[i], rec.cutoff[i],
        )
        lines.append(",".join(repr(float(x)) for x in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def nonlinearity(v: SpectralField) -> SpectralField:
    """The projected convection term P[div(v tensor v)], de-aliased.

    Computed pseudo-spectrally: collocation products of the velocity
    components, a forward transform, the divergence multiplier
    2 pi i k_l on the second tensor index, then de-alias and project.

    Args:
        v: divergence-free field, band-limited to the de-alias support.

    Raises:
        ValidationError: if v carries divergence or modes beyond the band.
    """
    g = v.grid
    scale = float(np.max(np.abs(v.coeffs)))
    if scale > 0 and v.divergence_sup() > 1e-8 * scale * g.K:
        raise ValidationError("nonlinearity requires a divergence-free field")
    outside = v.coeffs[~g.dealias_mask]
    if outside.size and np.any(outside != 0):
        raise ValidationError("nonlinearity requires a band-limited field (|k|_inf <= K)")
    out, _ = _convection(g, v.coeffs)
    return SpectralField(g, out)


def _convection(grid: Grid, coeffs: np.ndarray) -> tuple[np.ndarray, float]:
    """De-aliased projected convection and the peak collocation speed."""
    V = scipy.fft.ifftn(coeffs, axes=(0, 1, 2), norm="forward").real
    vmax = float(np.sqrt(np.max(np.sum(V * V, axis=-1))))
    prod = V[..., :, None] * V[..., None, :]
    phat = scipy.fft.fftn(prod, axes=(0, 1, 2), norm="forward")
    div = TWO_PI * 1j * (
        grid.kx[..., None] * phat[..., 0]
        + grid.ky[..., None] * phat[..., 1]
        + grid.kz[..., None] * phat[..., 2]
    )
    div *= grid.dealias_mask[..., None]
    kd = grid.kx * div[..., 0] + grid.ky * div[..., 1] + grid.kz * div[..., 2]
    k2 = np.where(grid.k2 > 0, grid.k2, 1).astype(np.float64)
    factor = kd / k2
    div[..., 0] -= factor * grid.kx
    div[..., 1] -= factor * grid.ky
    div[..., 2] -= factor * grid.kz
    return div, vmax


def cutoff_factor(v: SpectralField, R: float, r: float) -> float:
    """phi(||v||_{H^r} / R) for the smooth bump phi.

    phi(x) = 1 for x <= 1, 0 for x >= 2, and on (1, 2) the standard glue
    psi(2 - x) / (psi(2 - x) + psi(x - 1)) with psi(t) = exp(-1/t) for
    t > 0.  Exactly 1 and exactly 0 on the hard regions.
    """
    if R <= 0:
        raise ValidationError(f"cutoff radius must be positive, got {R}")
    return _phi(sobolev_norm(v, r) / R)


def _phi(x: float) -> float:
    if x <= 1.0:
        return 1.0
    if x >= 2.0:
        return 0.0
    a = math.exp(-1.0 / (2.0 - x))
    b = math.exp(-1.0 / (x - 1.0))
    return a / (a + b)


class CriticalExponents:
    """Exponent bundle for one gamma: delta, p_c, beta, and beta0(p)."""

    def __init__(self, gamma: float):
        if gamma <= 1:
            raise ValidationError(f"critical exponents require gamma > 1, got {gamma}")
        self.gamma = float(gamma)
        self.delta = 2.5 - 2.0 * self.gamma
        self.p_critical = 4.0 * self.gamma / (6.0 * self.gamma - 5.0)
        self.beta = 1.25 - self.gamma / 2.0

    def beta0(self, p: float) -> float:
        return self.gamma * (1.0 - 1.0 / p)

    def __iter__(self):
        return iter((self.delta, self.p_critical, self.beta, self.beta0))

    def __repr__(self):
        return (
            f"CriticalExponents(gamma={self.gamma}, delta={self.delta}, "
            f"p_critical={self.p_critical}, beta={self.beta})"
        )


def critical_exponents(gamma: float) -> CriticalExponents:
    """delta = 5/2 - 2 gamma, p_c = 4 gamma / (6 gamma - 5),
    beta = 5/4 - gamma/2, and the map p -> gamma (1 - 1/p).

    Rejects gamma <= 1.
    """
    return CriticalExponents(gamma)


def random_divergence_free(
    grid: Grid,
    driver: BrownianDriver,
    sample: int,
    kmin: int = 1,
    kmax: int = 3,
    amplitude: float = 1.0,
) -> SpectralField:
    """Mean-zero divergence-free Gaussian data with band kmin <= |k| <= kmax.

    Coefficients are drawn from the addressed initial-data stream of the
    driver (purpose 1, keyed by sample), projected onto the plane orthogonal
    to k, mirrored to -k, and the whole field is rescaled to the requested
    L^2 norm.  Deterministic per (driver seed, sample).
    """
    if not (1 <= kmin <= kmax):
        raise ValidationError(f"need 1 <= kmin <= kmax, got [{kmin}, {kmax}]")
    if kmax > grid.K:
        raise ValidationError(f"band limit {kmax} exceeds the de-alias cutoff K = {grid.K}")
    modes = []
    for k1 in range(-kmax, kmax + 1):
        for k2 in range(-kmax, kmax + 1):
            for k3 in range(-kmax, kmax + 1):
                r2 = k1 * k1 + k2 * k2 + k3 * k3
                if kmin * kmin <= r2 <= kmax * kmax:
                    kk = (k1, k2, k3)
                    if _positive_half(kk):
                        modes.append(kk)
    modes.sort()
    z = driver.normals(BrownianDriver.PURPOSE_INITIAL, sample, 0, (len(modes), 6))
    coeffs = np.zeros((grid.N,) * 3 + (3,), dtype=np.complex128)
    for i, kk in enumerate(modes):
        a = z[i, :3] + 1j * z[i, 3:]
        kf = np.array(kk, dtype=np.float64)
        a = a - kf * (kf @ a) / float(kf @ kf)
        slot = grid.index_of(kk)
        cslot = grid.index_of(tuple(-c for c in kk))
        coeffs[slot] = a
        coeffs[cslot] = np.conj(a)
    f = SpectralField(grid, coeffs)
    norm = l2_norm(f)
    if norm == 0:
        return f
    return SpectralField(grid, coeffs * (amplitude / norm))


def _positive_half(k) -> bool:
    k1, k2, k3 = k
    if k1 != 0:
        return k1 > 0
    if k2 != 0:
        return k2 > 0
    return k3 > 0


# ---------------------------------------------------------------------------
# Marching kernel

class _Marcher:
    """Per-config precomputation and the one-step kernel.

    Holds the exact linear factors, the exponential of the corrector flow,
    the noise bundle, and scratch metadata.  Step arithmetic operates on raw
    coefficient arrays; the public step functions wrap fields around it.
    """

    def __init__(self, cfg: SimConfig, mode: str, mean_velocity: Sequence[float]):
        cfg.validate()
        self.cfg = cfg
        self.mode = mode
        self.grid = Grid(cfg.N)
        g = self.grid
        self.w = np.asarray(mean_velocity, dtype=np.float64)
        if self.w.shape != (3,):
            raise ValidationError("mean velocity must be a 3-vector")
        mu_eff = cfg.mu_eff_factor * cfg.mu if mode == "deterministic" else 0.0
        k2f = g.k2.astype(np.float64)
        lam = np.float_power(k2f, cfg.gamma)
        lam[g.k2 == 0] = 0.0
        lam += mu_eff * TWO_PI**2 * k2f
        self.lam = lam
        self.damp = np.exp(-cfg.dt * lam)[..., None] * g.dealias_mask[..., None]
        zero = g.index_of((0, 0, 0))
        self.damp[zero] = 1.0
        self.drift_symbol = (
            TWO_PI * 1j * (self.w[0] * g.kx + self.w[1] * g.ky + self.w[2] * g.kz)
        )[..., None]
        self.has_drift = bool(np.any(self.w != 0.0))
        self.sob_r = (1.0 + k2f) ** cfg.r

        self.noise: Optional[TransportNoise] = None
        self.expM: Optional[np.ndarray] = None
        theta = cfg.theta() if mode != "deterministic" else None
        if theta is not None and cfg.mu > 0:
            self.noise = TransportNoise(g, theta, mu=cfg.mu)
            stat = (
                cfg.dt * 1.5 * cfg.mu * TWO_PI**2
                * sum(t * t * (k[0] ** 2 + k[1] ** 2 + k[2] ** 2)
                      for k, t in theta.values.items())
            )
            if stat > cfg.stability_bound:
                raise ValidationError(
                    f"rule 'dt (2 pi n |theta|-weighted transport intensity)^2 "
                    f"<= stability bound' violated: statistic {stat:.3g} > "
                    f"bound {cfg.stability_bound}"
                )
            M = self.noise.corrector_matrices()
            self.expM = expm_batch(cfg.dt * cfg.mu * M)
        if cfg.scheme == "etd2":
            with np.errstate(invalid="ignore"):
                z = cfg.dt * lam
                self.phi1 = np.where(z > 1e-5, -np.expm1(-z) / np.where(z == 0, 1, z), 1 - z / 2 + z * z / 6)
                self.phi2 = np.where(
                    z > 1e-5,
                    (np.exp(-z) - 1 + z) / np.where(z == 0, 1, z) ** 2,
                    0.5 - z / 6 + z * z / 24,
                )
            self.phi1 = self.phi1[..., None]
            self.phi2 = self.phi2[..., None]

    # -- substeps -----------------------------------------------------------

    def damp_linear(self, arr: np.ndarray) -> np.ndarray:
        return arr * self.damp

    def corrector_flow(self, arr: np.ndarray) -> np.ndarray:
        if self.expM is None:
            return arr
        g = self.grid
        flat = arr.reshape(-1, 3)
        band = g.band_indices
        flat[band] = np.einsum("mab,mb->ma", self.expM, flat[band])
        return arr

    def explicit_terms(self, arr: np.ndarray, step: int) -> np.ndarray:
        """dt times the explicit drift stage (convection, cutoff, drift)."""
        cfg = self.cfg
        out = np.zeros_like(arr)
        if cfg.nonlinearity_on:
            factor = 1.0
            if self.mode == "stochastic-cutoff":
                hr = float(np.sqrt(np.sum(self.sob_r[..., None] * np.abs(arr) ** 2)))
                factor = _phi(hr / cfg.cutoff_R)
            if factor != 0.0:
                conv, vmax = _convection(self.grid, arr)
                stat = cfg.dt * TWO_PI * self.grid.K * vmax * factor
                if stat > cfg.cfl_bound:
                    raise SimulationError(
                        f"step {step}: rejected by the nonlinear growth rule, "
                        f"dt * 2 pi K * max|v| * phi = {stat:.3g} > {cfg.cfl_bound}"
                    )
                out -= factor * conv
        if self.has_drift:
            out -= self.drift_symbol * arr
        return cfg.dt * out

    def noise_kick(self, arr: np.ndarray, driver: BrownianDriver, sample: int, step: int) -> np.ndarray:
        from .noise import noise_increment_field

        assert self.noise is not None
        inc = self.noise.draw_increments(driver, sample, step, self.cfg.dt)
        f = noise_increment_field(SpectralField(self.grid, arr), self.noise, inc)
        return f.coeffs

    # -- full steps ---------------------------------------------------------

    def step(
        self,
        arr: np.ndarray,
        step: int,
        driver: Optional[BrownianDriver] = None,
        sample: int = 0,
        increments: Optional[np.ndarray] = None,
    ) -> tuple[np.ndarray, float]:
        """One step from state arr; returns (next state, exact linear dissipation)."""
        cfg = self.cfg
        if cfg.scheme == "etd2" and self.mode == "deterministic":
            return self._step_etd2(arr, step)
        e0 = float(np.sum(np.abs(arr) ** 2))
        damped = self.damp_linear(arr)
        diss = e0 - float(np.sum(np.abs(damped) ** 2))
        damped = self.corrector_flow(damped)
        nxt = damped + self.explicit_terms(damped, step)
        if self.noise is not None:
            if increments is None:
                assert driver is not None
                inc = self.noise.draw_increments(driver, sample, step, cfg.dt)
            else:
                inc = increments
            from .noise import noise_increment_field

            kick = noise_increment_field(
                SpectralField(self.grid, damped), self.noise, inc
            )
            nxt = nxt + kick.coeffs
        return nxt, diss

    def _step_etd2(self, arr: np.ndarray, step: int) -> tuple[np.ndarray, float]:
        cfg = self.cfg
        e0 = float(np.sum(np.abs(arr) ** 2))
        damped = self.damp_linear(arr)
        diss = e0 - float(np.sum(np.abs(damped) ** 2))
        f0 = self.explicit_terms(arr, step) / cfg.dt
        stage = damped + cfg.dt * self.phi1 * f0 * self.grid.dealias_mask[..., None]
        f1 = self.explicit_terms(stage, step) / cfg.dt
        nxt = stage + cfg.dt * self.phi2 * (f1 - f0) * self.grid.dealias_mask[..., None]
        return nxt, diss


_marcher_cache: dict = {}


def _marcher_for(cfg: SimConfig, mode: str, mean_velocity) -> _Marcher:
    key = (
        tuple(sorted(cfg.to_dict().items(), key=lambda kv: kv[0])),
        mode,
        tuple(float(c) for c in mean_velocity),
    )
    key = repr(key)
    m = _marcher_cache.get(key)
    if m is None:
        m = _Marcher(cfg, mode, mean_velocity)
        if len(_marcher_cache) > 32:
            _marcher_cache.clear()
        _marcher_cache[key] = m
    return m


def step_deterministic(v: SpectralField, cfg: SimConfig) -> SpectralField:
    """One deterministic step (see the module docstring for the scheme).

    The state is taken as the mean-zero fluctuation; any mean on v is
    preserved untouched and the drift comes from cfg.drift alone.
    """
    m = _marcher_for(cfg, "deterministic", cfg.drift)
    arr, _ = m.step(v.coeffs.copy(), step=0)
    return SpectralField(v.grid, arr)


def step_stochastic(v: SpectralField, cfg: SimConfig, increments: np.ndarray) -> SpectralField:
    """One stochastic step driven by the given Brownian increments.

    increments comes from TransportNoise.draw_increments.  With the noise
    absent (theta_n = None or mu = 0) this degenerates bit-for-bit to
    step_deterministic.
    """
    mode = cfg.mode if cfg.mode != "deterministic" else "stochastic"
    m = _marcher_for(cfg, mode, cfg.drift)
    if m.noise is None:
        return step_deterministic(v, replace(cfg, mode="deterministic", mu_eff_factor=0.0))
    arr, _ = m.step(v.coeffs.copy(), step=0, increments=increments)
    return SpectralField(v.grid, arr)


def integrate(
    cfg: SimConfig,
    v0: SpectralField,
    mode: Optional[str] = None,
    sample: int = 0,
    driver: Optional[BrownianDriver] = None,
) -> TrajectoryRecord:
    """March from 0 to T, recording diagnostics on the cadence grid.

    The initial field is projected, de-aliased, and split into mean plus
    fluctuation; the recorded diagnostics describe the fluctuation.  Records
    are taken every record_every steps and at the final time.  The march
    stops early with the blow-up flag when the H^r norm crosses the guard
    threshold, and raises IntegrationAborted on non-finite values.
    """
    if mode is None:
        mode = cfg.mode
    if mode not in MODES:
        raise ValidationError(f"unknown integration mode {mode!r}")
    cfg = replace(cfg, mode=mode)
    cfg.validate()
    grid = Grid(cfg.N)
    if v0.grid != grid:
        raise ValidationError(f"initial data lives on N = {v0.grid.N}, config says {cfg.N}")
    v = dealias(helmholtz_project(v0))
    mbar = mean(v)
    v = subtract_mean(v)
    w = np.asarray(cfg.drift, dtype=np.float64) + mbar
    marcher = _Marcher(cfg, mode, w)
    driver = driver or BrownianDriver(cfg.seed)

    g = grid
    k2f = g.k2.astype(np.float64)
    wt_r = (1.0 + k2f) ** cfg.r
    wt_g = (1.0 + k2f) ** cfg.gamma
    s_besov = cfg.gamma * (1.0 - 2.0 / cfg.p)
    guard = cfg.guard_threshold

    arr = v.coeffs.copy()
    e0 = float(np.sum(np.abs(arr) ** 2))
    diss_acc = 0.0

    times, l2s, hrs, hgs, bsv, defect, cut = [], [], [], [], [], [], []
    snaps = [] if cfg.keep_snapshots else None
    blown_up = False
    blowup_step = None

    def record(step_idx: int):
        t = step_idx * cfg.dt
        f = SpectralField(g, arr)
        e = float(np.sum(np.abs(arr) ** 2))
        times.append(t)
        l2s.append(math.sqrt(e))
        hr = float(np.sqrt(np.sum(wt_r[..., None] * np.abs(arr) ** 2)))
        hrs.append(hr)
        hgs.append(float(np.sqrt(np.sum(wt_g[..., None] * np.abs(arr) ** 2))))
        bsv.append(besov_norm(f, s_besov, cfg.p))
        defect.append(((e + diss_acc - e0) / e0) if e0 > 0 else 0.0)
        if mode == "stochastic-cutoff":
            cut.append(_phi(hr / cfg.cutoff_R))
        else:
            cut.append(1.0)
        if snaps is not None:
            snaps.append(arr.copy())
        return hr

    record(0)
    n_steps = cfg.n_steps
    for i in range(n_steps):
        with np.errstate(over="ignore", invalid="ignore"):
            arr, diss = marcher.step(arr, step=i, driver=driver, sample=sample)
            e = float(np.sum(np.abs(arr) ** 2))
        diss_acc += diss
        if not math.isfinite(e):
            raise IntegrationAborted(i + 1)
        is_record = ((i + 1) % cfg.record_every == 0) or (i + 1 == n_steps)
        hr_now = None
        if guard is not None:
            hr_now = float(np.sqrt(np.sum(wt_r[..., None] * np.abs(arr) ** 2)))
        if is_record or (guard is not None and hr_now is not None and hr_now >= guard):
            record(i + 1)
        if guard is not None and hr_now is not None and hr_now >= guard:
            blown_up = True
            blowup_step = i + 1
            break

    final = arr.copy()
    final[g.index_of((0, 0, 0))] = mbar
    return TrajectoryRecord(
        times=np.array(times),
        l2=np.array(l2s),
        hr=np.array(hrs),
        hgamma=np.array(hgs),
        besov=np.array(bsv),
        energy_defect=np.array(defect),
        cutoff=np.array(cut),
        config=cfg,
        mean_velocity=w,
        final=SpectralField(g, final),
        blown_up=blown_up,
        blowup_step=blowup_step,
        snapshots=snaps,
    )


def regularity_functionals(rec: TrajectoryRecord, p: float, gamma: float) -> dict:
    """The two tracked regularity functionals of a trajectory.

    Returns {"hgamma_lp": int_0^T ||v||_{H^gamma}^p dt by the trapezoid
    rule, "besov_sup": sup_t of the recorded Besov norm}.  The Besov column
    was recorded at s = gamma (1 - 2/p) of the run's own config.
    """
    if len(rec.times) == 0:
        raise ValidationError("empty trajectory record")
    if p < 1:
        raise ValidationError(f"integrability exponent must be >= 1, got {p}")
    if abs(p - rec.config.p) > 1e-12 * max(1.0, abs(p)):
        raise ValidationError(
            f"record columns were taken at p = {rec.config.p}, requested p = {p}"
        )
    if abs(gamma - rec.config.gamma) > 1e-12 * max(1.0, abs(gamma)):
        raise ValidationError(
            f"record columns were taken at gamma = {rec.config.gamma}, "
            f"requested gamma = {gamma}"
        )
    vals = np.asarray(rec.hgamma, dtype=np.float64) ** p
    integral = float(np.trapezoid(vals, rec.times)) if len(rec.times) > 1 else 0.0
    return {"hgamma_lp": integral, "besov_sup": float(np.max(rec.besov))}
