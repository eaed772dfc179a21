import numpy as np
import pytest

import oracles
from torusflow import (
    BrownianDriver,
    Grid,
    SpectralField,
    ThetaSpectrum,
    TransportNoise,
    ValidationError,
    build_basis,
    corrector_apply,
    corrector_limit_error,
    field_from_modes,
    helmholtz_project,
    l2_inner,
    noise_energy_rate,
    noise_increment_field,
    theta_shell,
    transport_mode_apply,
)
from torusflow.noise import positive_half, real_noise_covariance_check


def random_div_free(grid, seed, kmax=3, nmodes=10, scale=0.3):
    rng = np.random.default_rng(seed)
    coeffs = np.zeros((grid.N,) * 3 + (3,), dtype=np.complex128)
    for _ in range(nmodes):
        k = tuple(int(c) for c in rng.integers(-kmax, kmax + 1, size=3))
        if k == (0, 0, 0):
            continue
        a = rng.normal(size=3) + 1j * rng.normal(size=3)
        coeffs[grid.index_of(k)] += a
        coeffs[grid.index_of(tuple(-c for c in k))] += np.conj(a)
    f = helmholtz_project(SpectralField(grid, coeffs * scale))
    return f


# --- coefficient spectra ---------------------------------------------------

def test_theta_shell_support_and_normalization():
    for n in (1, 2, 3):
        th = theta_shell(n)
        for k in th.support():
            r2 = sum(c * c for c in k)
            assert n * n <= r2 <= 4 * n * n
        assert abs(th.sum_sq - 1.0) < 1e-12
        assert th.meta == {"n": n, "alpha_decay": 1.0, "normalized": True}


def test_theta_shell_matches_oracle_weights():
    for n, alpha in [(1, 1.0), (2, 1.0), (2, 0.5)]:
        th = theta_shell(n, alpha)
        want = oracles.shell_weights(n, alpha)
        assert set(th.support()) == set(want)
        for k, w in want.items():
            assert abs(th.value(k) - w) < 1e-12


def test_theta_shell_is_radial():
    assert theta_shell(2).is_radial()
    assert theta_shell(3, 0.7).is_radial()


def test_theta_spectrum_validation():
    with pytest.raises(ValidationError):
        ThetaSpectrum({(0, 0, 0): 1.0})
    with pytest.raises(ValidationError):
        ThetaSpectrum({(1, 0, 0): -0.5, (-1, 0, 0): -0.5})
    with pytest.raises(ValidationError):
        # not even under k -> -k
        ThetaSpectrum({(1, 0, 0): 1.0, (-1, 0, 0): 0.5})


def test_theta_spectrum_json_round_trip():
    th = theta_shell(2, 0.5)
    back = ThetaSpectrum.from_json(th.to_json())
    assert back == th
    assert back.meta == th.meta


# --- frames ----------------------------------------------------------------

def test_frames_orthonormal_and_even():
    basis = build_basis([(1, 0, 0), (0, 2, 1), (-3, 1, 2), (0, 0, 1), (1, 1, 1)])
    for k in [(1, 0, 0), (0, 2, 1), (-3, 1, 2), (0, 0, 1), (1, 1, 1)]:
        a1, a2 = basis.frame(k)
        kf = np.array(k, dtype=float)
        for a in (a1, a2):
            assert abs(np.dot(a, kf)) < 1e-12
            assert abs(np.linalg.norm(a) - 1.0) < 1e-12
        assert abs(np.dot(a1, a2)) < 1e-12
        b1, b2 = basis.frame(tuple(-c for c in k))
        assert np.array_equal(a1, b1) and np.array_equal(a2, b2)


def test_frames_match_oracle():
    basis = build_basis([(2, -1, 3), (0, 1, -2), (5, 0, 0)])
    for k in [(2, -1, 3), (0, 1, -2), (5, 0, 0)]:
        a1, a2 = basis.frame(k)
        w1, w2 = oracles.frame(k)
        assert np.allclose(a1, w1, atol=1e-14)
        assert np.allclose(a2, w2, atol=1e-14)


def test_positive_half_partition():
    for k in [(1, 0, 0), (0, 1, 0), (0, 0, 1), (2, -1, 3), (-2, 1, -3)]:
        neg = tuple(-c for c in k)
        assert positive_half(k) != positive_half(neg)


# --- driver ----------------------------------------------------------------

def test_driver_reproducible_and_addressed():
    d = BrownianDriver(42)
    a = d.normals(0, 3, 7, (4, 2))
    b = d.normals(0, 3, 7, (4, 2))
    assert np.array_equal(a, b)
    c = d.normals(0, 3, 8, (4, 2))
    assert not np.array_equal(a, c)
    e = BrownianDriver(43).normals(0, 3, 7, (4, 2))
    assert not np.array_equal(a, e)


def test_increment_scaling():
    g = Grid(32)
    noise = TransportNoise(g, theta_shell(1), mu=1.0)
    d = BrownianDriver(0)
    dt = 2.5e-3
    inc = noise.draw_increments(d, 0, 0, dt)
    base = noise.draw_increments(d, 0, 0, 1.0)
    assert np.allclose(inc, base * np.sqrt(dt))


def test_real_pairing_covariance():
    # each complex driver is B^k + i B^-k with unit-variance real parts
    g = Grid(32)
    noise = TransportNoise(g, theta_shell(1), mu=1.0)
    d = BrownianDriver(9)
    cov = real_noise_covariance_check(noise, d, nsamples=4000)
    assert np.max(np.abs(cov[..., 0, 0] - 1.0)) < 0.15
    assert np.max(np.abs(cov[..., 1, 1] - 1.0)) < 0.15
    assert np.max(np.abs(cov[..., 0, 1])) < 0.15


# --- transport and corrector ----------------------------------------------

def test_transport_mode_apply_matches_shift():
    g = Grid(32)
    j, k = (2, 1, 0), (1, 0, 1)
    a = np.array([0.1, -0.2, 0.3]) + 0.05j
    f = field_from_modes(g, [(j, a)])
    out = transport_mode_apply(f, k, 1)
    basis = build_basis([k])
    e1, _ = basis.frame(k)
    # coefficient moved from j to j + k with weight 2 pi i (e1 . j), projected
    want = oracles._mat_apply(
        oracles.leray((3, 1, 1)), tuple(2j * np.pi * np.dot(e1, j) * a)
    )
    got = out.coeffs[g.index_of((3, 1, 1))]
    assert np.allclose(got, want, atol=1e-13)


def test_transport_mode_apply_drops_outside_band():
    g = Grid(32)  # K = 10
    f = field_from_modes(g, [((10, 0, 0), (0.0, 1.0, 0.0))])
    out = transport_mode_apply(f, (1, 0, 0), 1)
    assert np.all(out.coeffs == 0)  # 11 > K, term dropped entirely


def test_corrector_matches_bruteforce_oracle():
    # every mode |j| <= 3, shells n <= 4, relative error 1e-12
    g = Grid(32)
    for n in (1, 2, 3, 4):
        noise = TransportNoise(g, theta_shell(n), mu=1.0)
        modes = []
        for j1 in range(-3, 4):
            for j2 in range(-3, 4):
                for j3 in range(-3, 4):
                    if (j1, j2, j3) != (0, 0, 0) and j1 * j1 + j2 * j2 + j3 * j3 <= 9:
                        modes.append((j1, j2, j3))
        rng = np.random.default_rng(n)
        for j in modes[:: max(1, len(modes) // 24)]:
            a = rng.normal(size=3) + 1j * rng.normal(size=3)
            a = np.array(oracles.helmholtz_mode(j, tuple(a)))
            f = field_from_modes(g, [(j, a)])
            out = corrector_apply(f, noise)
            want = oracles.corrector_mode(j, tuple(a), n, mu=1.0, alpha=1.0, trunc=g.K)
            got = out.coeffs[g.index_of(j)]
            scale = max(np.max(np.abs(want)), 1e-30)
            assert np.max(np.abs(got - np.array(want))) < 1e-12 * scale


def test_corrector_frame_collapse_identity():
    # sum over the frame of (a . j)^2 equals |j|^2 - (k.j)^2/|k|^2
    for k in [(1, 0, 0), (1, 1, 0), (2, -1, 3)]:
        a1, a2 = oracles.frame(k)
        for j in [(1, 2, 0), (0, 0, 3), (2, 2, 2)]:
            s = np.dot(a1, j) ** 2 + np.dot(a2, j) ** 2
            r2 = sum(c * c for c in k)
            want = sum(c * c for c in j) - np.dot(k, j) ** 2 / r2
            assert abs(s - want) < 1e-12


def test_corrector_single_pair_spectrum():
    # the collapsed frame sum is exact per k, so a lone +-k pair works too
    g = Grid(32)
    k = (1, 0, 0)
    th = ThetaSpectrum({k: 1.0, (-1, 0, 0): 1.0})
    noise = TransportNoise(g, th, mu=0.5)
    j = (1, 1, 0)
    a = np.array(oracles.helmholtz_mode(j, (1.0, 0.0, 0.3j)))
    f = field_from_modes(g, [(j, a)])
    out = corrector_apply(f, noise)
    acc = np.zeros(3, dtype=np.complex128)
    for kk in [k, (-1, 0, 0)]:
        jk = tuple(j[i] + kk[i] for i in range(3))
        for av in oracles.frame(kk):
            dot = float(np.dot(av, j))
            pv = oracles._mat_apply(oracles.leray(jk), tuple(a))
            acc += dot * dot * np.array(pv)
    want = -1.5 * 0.5 * (2 * np.pi) ** 2 * np.array(
        oracles._mat_apply(oracles.leray(j), tuple(acc))
    )
    got = out.coeffs[g.index_of(j)]
    assert np.max(np.abs(got - want)) < 1e-12 * max(np.max(np.abs(want)), 1e-30)


def test_energy_rate_matches_oracle():
    g = Grid(32)
    noise = TransportNoise(g, theta_shell(1), mu=0.7)
    modes = {(1, 2, 0): (0.1 + 0.2j, -0.05j, 0.08), (3, 0, 1): (0.0, 0.15, -0.1j)}
    pairs = []
    for j, a in modes.items():
        pa = oracles.helmholtz_mode(j, a)
        pairs.append((j, pa))
    f = field_from_modes(g, pairs)
    got = noise_energy_rate(f, noise)
    field_modes = {}
    for j, pa in pairs:
        field_modes[j] = pa
        field_modes[tuple(-c for c in j)] = tuple(np.conj(c) for c in pa)
    want = oracles.energy_rate_mode(field_modes, oracles.shell_weights(1, 1.0), 0.7, g.K)
    assert abs(got - want) < 1e-10 * max(want, 1e-30)


def test_corrector_balances_energy_rate():
    # 2 <Cv, v> + rate = 0, the discrete energy bookkeeping identity
    g = Grid(32)
    for n, mu in [(1, 1.0), (2, 0.3)]:
        noise = TransportNoise(g, theta_shell(n), mu=mu)
        for seed in range(3):
            v = random_div_free(g, seed)
            lhs = 2.0 * l2_inner(corrector_apply(v, noise), v).real
            rate = noise_energy_rate(v, noise)
            h1 = float(
                np.sqrt(np.sum((1 + g.k2.astype(float))[..., None] * np.abs(v.coeffs) ** 2))
            )
            assert abs(lhs + rate) <= 1e-9 * h1**2


def test_increment_field_routes_agree():
    g = Grid(32)
    noise = TransportNoise(g, theta_shell(2), mu=0.5)
    d = BrownianDriver(3)
    v = random_div_free(g, 11)
    inc = noise.draw_increments(d, 0, 0, 1e-3)
    fast = noise_increment_field(v, noise, inc, method="fast")
    slow = noise_increment_field(v, noise, inc, method="permode")
    scale = max(float(np.max(np.abs(fast.coeffs))), 1e-30)
    assert np.max(np.abs(fast.coeffs - slow.coeffs)) < 1e-12 * scale


def test_increment_field_real_and_divergence_free():
    g = Grid(32)
    noise = TransportNoise(g, theta_shell(1), mu=1.0)
    d = BrownianDriver(1)
    v = random_div_free(g, 2)
    inc = noise.draw_increments(d, 0, 5, 1e-3)
    out = noise_increment_field(v, noise, inc)
    assert out.is_real(tol=1e-12)
    assert out.divergence_sup() < 1e-12
    assert np.all(out.coeffs[g.index_of((0, 0, 0))] == 0)


def test_increment_is_pathwise_energy_neutral_to_first_order():
    # the kick is L2-orthogonal to the state: transport moves energy, the
    # only gain is the second-order |kick|^2
    g = Grid(32)
    noise = TransportNoise(g, theta_shell(1), mu=1.0)
    d = BrownianDriver(8)
    v = random_div_free(g, 4)
    inc = noise.draw_increments(d, 0, 0, 1e-3)
    kick = noise_increment_field(v, noise, inc)
    cross = l2_inner(v, kick).real
    assert abs(cross) < 1e-14 * l2_inner(v, v).real


def test_corrector_limit_error_trend():
    errs = [corrector_limit_error((1, 0, 0), (0.0, 1.0, 0.0), n) for n in (2, 4, 8)]
    assert errs[0] > errs[1] > errs[2]
    slope = np.polyfit(np.log([2, 4, 8]), np.log(errs), 1)[0]
    assert slope < -1.5


def test_corrector_limit_error_validates_input():
    with pytest.raises(ValidationError):
        corrector_limit_error((0, 0, 0), (0.0, 1.0, 0.0), 2)
    with pytest.raises(ValidationError):
        corrector_limit_error((1, 0, 0), (1.0, 0.0, 0.0), 2)  # not orthogonal
    with pytest.raises(ValidationError):
        corrector_limit_error((1, 0, 0), (0.0, 0.0, 0.0), 2)


def test_transport_noise_wrap_safety():
    with pytest.raises(ValidationError):
        TransportNoise(Grid(16), theta_shell(3), mu=1.0)  # 16 < 2*5 + 6


def test_transport_noise_rejects_negative_mu():
    with pytest.raises(ValidationError):
        TransportNoise(Grid(32), theta_shell(1), mu=-0.1)
