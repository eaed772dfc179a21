import math

import numpy as np
import pytest

import oracles
from torusflow import (
    BrownianDriver,
    Grid,
    IntegrationAborted,
    SimConfig,
    SimulationError,
    SpectralField,
    TransportNoise,
    ValidationError,
    critical_exponents,
    cutoff_factor,
    field_from_modes,
    integrate,
    l2_inner,
    l2_norm,
    nonlinearity,
    random_divergence_free,
    regularity_functionals,
    sobolev_norm,
    step_deterministic,
    step_stochastic,
    theta_shell,
    trajectory_to_csv,
)
from torusflow.dynamics import TrajectoryRecord, _phi
from torusflow.noise import noise_increment_field


def band_field(grid, seed, kmin=1, kmax=3, amplitude=0.3):
    return random_divergence_free(grid, BrownianDriver(seed), 0, kmin, kmax, amplitude)


# --- config validation ------------------------------------------------------

def test_config_rules_named():
    cases = [
        (dict(dt=0.0), "dt > 0"),
        (dict(T=1e-4, dt=1e-3), "T >= dt"),
        (dict(T=1.0005e-3, dt=1e-3), "integer multiple"),
        (dict(gamma=1.0), "gamma > 1"),
        (dict(mu=-1.0), "mu >= 0"),
        (dict(theta_n=4, N=16), "N/3 >= 2n + 2"),
        (dict(mode="stochastic", mu_eff_factor=0.6), "stochastic"),
        (dict(mode="stochastic-cutoff"), "cutoff requires R > 0"),
        (dict(scheme="etd2", mode="stochastic"), "deterministic-only"),
        (dict(record_every=0), "record_every"),
        (dict(guard=-1.0), "guard"),
    ]
    for over, needle in cases:
        cfg = SimConfig(**over)
        with pytest.raises(ValidationError) as err:
            cfg.validate()
        assert needle in str(err.value), f"{over}: {err.value}"


def test_window_rule_only_on_request():
    cfg = SimConfig(gamma=1.125, r=0.9, p=4.0)  # r above gamma (1 - 2/p)
    cfg.validate()  # fine without the window
    with pytest.raises(ValidationError) as err:
        cfg.validate(check_window=True)
    assert "5/2 - 2 gamma < r" in str(err.value)


def test_config_round_trip():
    cfg = SimConfig(N=16, theta_n=None, drift=(0.1, 0.0, -0.2), cutoff_R=2.0,
                    mode="stochastic-cutoff")
    back = SimConfig.from_dict(cfg.to_dict())
    assert back == cfg
    with pytest.raises(ValidationError):
        SimConfig.from_dict({"nope": 1})


# --- nonlinearity -----------------------------------------------------------

def test_nonlinearity_matches_convolution_oracle():
    # every field of at most 4 modes, checked against dictionary convolution
    g = Grid(32)
    rng = np.random.default_rng(2)
    for trial in range(6):
        nmodes = 1 + trial % 4
        pairs = {}
        while len(pairs) < nmodes:
            k = tuple(int(c) for c in rng.integers(-2, 3, size=3))
            if k == (0, 0, 0) or k in pairs or tuple(-c for c in k) in pairs:
                continue
            a = rng.normal(size=3) + 1j * rng.normal(size=3)
            pairs[k] = tuple(oracles.helmholtz_mode(k, tuple(a)))
        f = field_from_modes(g, list(pairs.items()))
        out = nonlinearity(f)
        both = {}
        for k, a in pairs.items():
            both[k] = a
            both[tuple(-c for c in k)] = tuple(np.conj(c) for c in a)
        want = oracles.convection(both)
        scale = max((abs(c) for b in want.values() for c in b), default=1.0)
        for j, b in want.items():
            got = out.coeffs[g.index_of(j)]
            assert np.max(np.abs(got - np.array(b))) < 1e-12 * max(scale, 1.0)


def test_nonlinearity_energy_neutral():
    # <N(v), v> = 0 to 1e-10 ||v||_{H^1}^3 for fields band-limited to K/2
    g = Grid(32)
    for seed in range(5):
        v = band_field(g, seed, 1, g.K // 2, 0.8)
        h1 = sobolev_norm(v, 1.0)
        ip = l2_inner(nonlinearity(v), v).real
        assert abs(ip) <= 1e-10 * h1**3


def test_nonlinearity_rejects_bad_fields():
    g = Grid(32)
    f = field_from_modes(g, [((1, 0, 0), (1.0, 0.0, 0.0))])  # divergence along k
    with pytest.raises(ValidationError):
        nonlinearity(f)
    h = field_from_modes(g, [((g.K + 1, 0, 0), (0.0, 1.0, 0.0))])
    with pytest.raises(ValidationError):
        nonlinearity(h)


# --- cutoff -----------------------------------------------------------------

def test_cutoff_hard_regions_exact():
    g = Grid(16)
    v = band_field(g, 0, 1, 2, 1.0)
    hr = sobolev_norm(v, 0.3)
    assert cutoff_factor(v, R=hr * 1.0001, r=0.3) == 1.0
    assert cutoff_factor(v, R=hr / 2.0001, r=0.3) == 0.0


def test_cutoff_monotone_scan():
    # phi against 100 increasing amplitudes never increases
    g = Grid(16)
    base = band_field(g, 1, 1, 2, 1.0)
    R = sobolev_norm(base, 0.3)
    values = []
    for amp in np.linspace(0.5, 3.0, 100):
        f = SpectralField(g, base.coeffs * amp)
        values.append(cutoff_factor(f, R=R, r=0.3))
    diffs = np.diff(values)
    assert np.all(diffs <= 1e-15)
    assert values[0] == 1.0 and values[-1] == 0.0


def test_cutoff_rejects_bad_radius():
    g = Grid(16)
    v = band_field(g, 0)
    with pytest.raises(ValidationError):
        cutoff_factor(v, R=0.0, r=0.3)


# --- steppers ---------------------------------------------------------------

def test_linear_step_exact_decay():
    g = Grid(32)
    cfg = SimConfig(N=32, gamma=1.125, mode="deterministic", theta_n=None,
                    nonlinearity_on=False, dt=2e-3)
    a = np.array(oracles.helmholtz_mode((2, 1, 0), (1.0, 0.5j, -0.2)))
    v = field_from_modes(g, [((2, 1, 0), a)])
    out = step_deterministic(v, cfg)
    lam = 5.0**1.125
    want = a * math.exp(-cfg.dt * lam)
    got = out.coeffs[g.index_of((2, 1, 0))]
    assert np.max(np.abs(got - want)) < 1e-12 * np.max(np.abs(want))


def test_theta_zero_stochastic_equals_deterministic():
    g = Grid(32)
    v = band_field(g, 3)
    cfg_s = SimConfig(N=32, mode="stochastic", theta_n=None, dt=1e-3)
    cfg_d = SimConfig(N=32, mode="deterministic", theta_n=None, dt=1e-3)
    a = step_stochastic(v, cfg_s, increments=None)
    b = step_deterministic(v, cfg_d)
    assert np.array_equal(a.coeffs, b.coeffs)


def test_single_pair_one_step_gaussian_oracle():
    # one noise mode pair, data on a single mode j: the coefficient at j
    # after one step is exactly the damped, corrector-flowed value (the
    # kick lands at j +- k only), and the kick at j + k is Gaussian with
    # the transported variance under the complex driver, E|dW|^2 = 2 dt
    from torusflow import ThetaSpectrum

    g = Grid(32)
    k = (1, 0, 0)
    spec = ThetaSpectrum({k: 1.0, (-1, 0, 0): 1.0})
    mu, dt = 0.3, 1e-3
    j = (0, 2, 0)
    a = np.array(oracles.helmholtz_mode(j, (0.2, 0.0, 0.1j)))
    v = field_from_modes(g, [(j, a)])
    cfg = SimConfig(N=32, mode="stochastic", theta_spectrum=spec, theta_n=None,
                    mu=mu, dt=dt, nonlinearity_on=False)
    noise = TransportNoise(g, spec, mu=mu)
    drv = BrownianDriver(0)

    from torusflow.dynamics import _Marcher

    m = _Marcher(cfg, "stochastic", (0.0, 0.0, 0.0))
    arr = m.corrector_flow(m.damp_linear(v.coeffs.copy()))
    want_at_j = arr[g.index_of(j)]

    one = step_stochastic(v, cfg, increments=noise.draw_increments(drv, 0, 0, dt))
    got_at_j = one.coeffs[g.index_of(j)]
    assert np.max(np.abs(got_at_j - want_at_j)) < 1e-13

    # empirical second moment at j + k over repeated draws
    S = 1200
    acc_var = 0.0
    jk_slot = g.index_of((1, 2, 0))
    for s in range(S):
        inc = noise.draw_increments(drv, s, 0, dt)
        out = step_stochastic(v, cfg, increments=inc)
        acc_var += float(np.sum(np.abs(out.coeffs[jk_slot]) ** 2))
    got_var = acc_var / S

    want_var = 0.0
    for av in oracles.frame(k):
        dot = np.dot(av, j)
        coef = oracles._mat_apply(
            oracles.leray((1, 2, 0)), tuple(2j * np.pi * dot * c for c in want_at_j)
        )
        want_var += 1.5 * mu * 2 * dt * sum(abs(c) ** 2 for c in coef)
    assert abs(got_var - want_var) < 0.1 * want_var


def test_stochastic_step_preserves_mean_exactly():
    g = Grid(32)
    cfg = SimConfig(N=32, mode="stochastic", theta_n=1, dt=1e-3)
    noise = TransportNoise(g, theta_shell(1))
    drv = BrownianDriver(5)
    v = band_field(g, 7)
    inc = noise.draw_increments(drv, 0, 0, cfg.dt)
    out = step_stochastic(v, cfg, increments=inc)
    assert np.array_equal(out.coeffs[g.index_of((0, 0, 0))], v.coeffs[g.index_of((0, 0, 0))])


def test_cfl_rejection_names_step():
    g = Grid(32)
    cfg = SimConfig(N=32, mode="deterministic", theta_n=None, dt=1.0, T=1.0,
                    cfl_bound=1e-6)
    v = band_field(g, 0, 1, 2, 1.0)
    with pytest.raises(SimulationError) as err:
        integrate(cfg, v)
    assert "step 0" in str(err.value)


# --- integrate --------------------------------------------------------------

def test_integrate_linear_decay_and_zero_defect():
    g = Grid(32)
    cfg = SimConfig(N=32, gamma=1.25, mode="deterministic", theta_n=None,
                    nonlinearity_on=False, dt=1e-3, T=0.05)
    a = np.array(oracles.helmholtz_mode((1, 1, 0), (1.0, 0.0, 0.5)))
    v = field_from_modes(g, [((1, 1, 0), a)])
    rec = integrate(cfg, v)
    lam = 2.0**1.25
    want = l2_norm(v) * math.exp(-lam * rec.times[-1])
    assert abs(rec.l2[-1] - want) <= 1e-10 * want
    assert np.max(np.abs(rec.energy_defect)) <= 1e-12


def test_integrate_two_rows_when_T_equals_dt():
    g = Grid(16)
    cfg = SimConfig(N=16, mode="deterministic", theta_n=None, dt=1e-3, T=1e-3)
    rec = integrate(cfg, band_field(g, 1))
    assert len(rec.times) == 2
    assert rec.times[0] == 0.0 and rec.times[1] == 1e-3


def test_integrate_div_free_and_real_throughout():
    g = Grid(32)
    cfg = SimConfig(N=32, mode="stochastic", theta_n=1, mu=0.5, dt=1e-3, T=0.02,
                    keep_snapshots=True)
    rec = integrate(cfg, band_field(g, 2))
    for arr in rec.snapshots:
        f = SpectralField(g, arr)
        scale = float(np.max(np.abs(arr)))
        assert f.divergence_sup() <= 1e-10 * max(1.0, scale * g.K)
        assert f.is_real(tol=1e-10)


def test_integrate_mean_bit_exact_with_drift():
    g = Grid(32)
    cfg = SimConfig(N=32, mode="stochastic", theta_n=1, dt=1e-3, T=0.01,
                    drift=(0.3, -0.1, 0.0))
    v = band_field(g, 4)
    c = v.coeffs.copy()
    c[g.index_of((0, 0, 0))] = np.array([0.125, 0.25, -0.5])  # dyadic, exact
    v = SpectralField(g, c)
    rec = integrate(cfg, v)
    assert np.array_equal(
        rec.final.coeffs[g.index_of((0, 0, 0))], np.array([0.125, 0.25, -0.5])
    )


def test_integrate_guard_flags_blow_up():
    g = Grid(16)
    cfg = SimConfig(N=16, mode="deterministic", theta_n=None, dt=1e-3, T=0.5,
                    guard=1e-9)
    rec = integrate(cfg, band_field(g, 1))
    assert rec.blown_up
    assert rec.blowup_step == 1
    assert rec.times[-1] == pytest.approx(1e-3)


def test_integrate_aborts_on_nonfinite():
    g = Grid(16)
    cfg = SimConfig(N=16, mode="deterministic", theta_n=None, dt=0.5, T=50.0,
                    cfl_bound=float("inf"))
    v = band_field(g, 3, 1, 2, 50.0)
    with pytest.raises(IntegrationAborted) as err:
        integrate(cfg, v)
    assert err.value.step >= 1


def test_stochastic_defect_shrinks_with_dt():
    # noise on, nonlinearity off: the defect drops by at least 1/0.8 per
    # halving at a bias-dominated configuration
    g = Grid(32)
    meds = []
    for dt in (1e-3, 5e-4, 2.5e-4):
        ds = []
        for s in range(3):
            cfg = SimConfig(N=32, mode="stochastic", theta_n=2, mu=0.1, dt=dt,
                            T=0.05, nonlinearity_on=False, record_every=200)
            v = random_divergence_free(g, BrownianDriver(0), s, 1, 3, 0.3)
            rec = integrate(cfg, v, sample=s, driver=BrownianDriver(0))
            ds.append(abs(rec.energy_defect[-1]))
        meds.append(float(np.median(ds)))
    assert meds[1] <= 0.8 * meds[0]
    assert meds[2] <= 0.8 * meds[1]


def test_phi_zero_cutoff_gives_linear_flow():
    g = Grid(32)
    v = band_field(g, 3)
    cut = SimConfig(N=32, mode="stochastic-cutoff", theta_n=1, dt=1e-3, T=0.01,
                    cutoff_R=1e-9, guard=1e9)
    lin = SimConfig(N=32, mode="stochastic", theta_n=1, dt=1e-3, T=0.01,
                    nonlinearity_on=False)
    a = integrate(cut, v)
    b = integrate(lin, v)
    assert np.array_equal(a.final.coeffs, b.final.coeffs)
    assert np.all(a.cutoff == 0.0)


def test_etd2_more_accurate_than_exp_euler():
    g = Grid(32)
    v = band_field(g, 6, 1, 3, 0.4)
    base = dict(N=32, mode="deterministic", theta_n=None, T=0.02)
    ref = integrate(SimConfig(dt=1.25e-4, scheme="etd2", **base), v)
    errs = {}
    for scheme in ("exp_euler", "etd2"):
        out = integrate(SimConfig(dt=1e-3, scheme=scheme, **base), v)
        errs[scheme] = float(np.max(np.abs(out.final.coeffs - ref.final.coeffs)))
    assert errs["etd2"] < errs["exp_euler"] / 5


# --- diagnostics ------------------------------------------------------------

def test_trajectory_csv_columns(tmp_path):
    g = Grid(16)
    cfg = SimConfig(N=16, mode="deterministic", theta_n=None, dt=1e-3, T=5e-3,
                    record_every=1)
    rec = integrate(cfg, band_field(g, 1))
    path = tmp_path / "traj.csv"
    trajectory_to_csv(rec, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "t,L2,Hr,Hgamma,Besov,energy_defect,cutoff_factor"
    assert len(lines) == 1 + len(rec.times)
    # repr floats round-trip exactly
    assert float(lines[1].split(",")[1]) == rec.l2[0]


def test_regularity_functionals_constant_record():
    cfg = SimConfig(N=16, theta_n=None, mode="deterministic")
    times = np.linspace(0.0, 2.0, 21)
    const = np.full_like(times, 1.7)
    rec = TrajectoryRecord(
        times=times, l2=const, hr=const, hgamma=const, besov=const,
        energy_defect=np.zeros_like(times), cutoff=np.ones_like(times),
        config=cfg, mean_velocity=np.zeros(3),
        final=band_field(Grid(16), 0),
    )
    out = regularity_functionals(rec, p=cfg.p, gamma=cfg.gamma)
    assert out["hgamma_lp"] == pytest.approx(2.0 * 1.7**cfg.p, rel=1e-12)
    assert out["besov_sup"] == 1.7


def test_regularity_functionals_cadence_stability():
    g = Grid(32)
    base = dict(N=32, mode="deterministic", theta_n=None, T=0.1)
    v = band_field(g, 5, 1, 3, 0.4)
    coarse = integrate(SimConfig(record_every=10, dt=1e-3, **base), v)
    fine = integrate(SimConfig(record_every=5, dt=1e-3, **base), v)
    a = regularity_functionals(coarse, 4.0, 1.125)
    b = regularity_functionals(fine, 4.0, 1.125)
    assert abs(a["hgamma_lp"] - b["hgamma_lp"]) < 0.05 * b["hgamma_lp"]
    assert abs(a["besov_sup"] - b["besov_sup"]) < 0.05 * b["besov_sup"]


def test_regularity_functionals_rejects_mismatch():
    g = Grid(16)
    cfg = SimConfig(N=16, mode="deterministic", theta_n=None, dt=1e-3, T=1e-2)
    rec = integrate(cfg, band_field(g, 1))
    with pytest.raises(ValidationError):
        regularity_functionals(rec, p=3.0, gamma=cfg.gamma)
    with pytest.raises(ValidationError):
        regularity_functionals(rec, p=cfg.p, gamma=2.0)


def test_critical_exponents_match_fraction_oracle():
    for gamma in (1.125, 1.2, 1.5):
        got = critical_exponents(gamma)
        want = oracles.exponents(gamma)
        assert got.delta == pytest.approx(float(want["delta"]), abs=1e-14)
        assert got.p_critical == pytest.approx(float(want["p_critical"]), abs=1e-14)
        assert got.beta == pytest.approx(float(want["beta"]), abs=1e-14)
        assert got.beta0(4.0) == pytest.approx(float(oracles.beta0(gamma, 4)), abs=1e-14)


def test_critical_exponents_reject_gamma_at_most_one():
    for gamma in (1.0, 0.5, -2.0):
        with pytest.raises(ValidationError):
            critical_exponents(gamma)


def test_random_divergence_free_properties():
    g = Grid(32)
    d = BrownianDriver(0)
    f = random_divergence_free(g, d, 0, 2, 3, 0.35)
    assert abs(l2_norm(f) - 0.35) < 1e-12
    assert f.divergence_sup() < 1e-12
    assert f.is_real()
    assert np.all(f.coeffs[g.index_of((0, 0, 0))] == 0)
    # band respected
    for k in [(1, 0, 0), (4, 0, 0)]:
        assert np.all(f.coeffs[g.index_of(k)] == 0)
    # deterministic per (seed, sample)
    f2 = random_divergence_free(g, BrownianDriver(0), 0, 2, 3, 0.35)
    assert np.array_equal(f.coeffs, f2.coeffs)
    f3 = random_divergence_free(g, d, 1, 2, 3, 0.35)
    assert not np.array_equal(f.coeffs, f3.coeffs)


def test_phi_glue_shape():
    assert _phi(0.99) == 1.0
    assert _phi(2.01) == 0.0
    assert 0.0 < _phi(1.5) < 1.0
    assert abs(_phi(1.5) - 0.5) < 1e-12  # symmetric midpoint
