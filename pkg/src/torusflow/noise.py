"""Kraichnan-type transport noise: frames, coefficients, driver, corrector.

The noise is built from divergence-free complex exponentials
sigma_{k,alpha}(x) = a_{k,alpha} exp(2 pi i k . x) with k in the nonzero
integer lattice and alpha in {1, 2}.  The amplitude vectors a_{k,alpha} form
an orthonormal frame of the plane orthogonal to k, chosen by a fixed rule so
that every run of the package agrees on them, and are copied to -k unchanged
(a_{-k,alpha} = a_{k,alpha}), which makes sigma_{-k,alpha} the complex
conjugate of sigma_{k,alpha}.

Each conjugate pair (k, -k) with k in the positive half lattice carries two
independent real Brownian motions B^{k,alpha} and B^{-k,alpha}, combined as

    W^{k,alpha}  = B^{k,alpha} + i B^{-k,alpha},
    W^{-k,alpha} = conj(W^{k,alpha}),

so E|W^{k,alpha}(t)|^2 = 2t.  The positive half lattice is k1 > 0, or
k1 = 0 and k2 > 0, or k1 = k2 = 0 and k3 > 0.

The Ito corrector of the transport noise with intensity sqrt(3 mu / 2) and
even coefficients theta acts modewise as

    (C v)(j) = -(3 mu / 2) (2 pi)^2
               sum_{k, alpha} theta_k^2 (a_{k,alpha} . j)^2 P_j P_{j+k} v(j),

where P_j is the Leray projector at mode j.  Because the frame is orthonormal
in the plane orthogonal to k, the alpha sum collapses exactly:
sum_alpha (a_{k,alpha} . j)^2 = |j|^2 - (k . j)^2 / |k|^2, independent of the
frame rule.  The implementation uses the collapsed form; the brute-force
oracles in the test suite use explicit frames, so a broken frame construction
would surface as a mismatch.

Discrete truncation: a (k, alpha) term is dropped exactly when the output
mode j + k leaves the de-alias band |j + k|_inf > K.  The same rule is
applied in noise_increment_field, corrector_apply, and noise_energy_rate,
which is what makes the discrete energy neutrality an identity instead of an
approximation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from typing import Iterable, Sequence

import numpy as np
import scipy.fft

from .errors import ValidationError
from .spectral import Grid, SpectralField, dealias, helmholtz_project

__all__ = [
    "NoiseBasis",
    "build_basis",
    "ThetaSpectrum",
    "theta_shell",
    "BrownianDriver",
    "TransportNoise",
    "transport_mode_apply",
    "noise_increment_field",
    "noise_energy_rate",
    "corrector_apply",
    "corrector_limit_error",
    "real_noise_covariance_check",
    "positive_half",
]

TWO_PI = 2.0 * np.pi


def positive_half(k: Sequence[int]) -> bool:
    """True when k lies in the positive half lattice Z^3_+."""
    k1, k2, k3 = (int(c) for c in k)
    if k1 != 0:
        return k1 > 0
    if k2 != 0:
        return k2 > 0
    return k3 > 0


def _frame_for(k: np.ndarray) -> np.ndarray:
    """The orthonormal amplitude pair for one wavevector, shape (2, 3).

    Rule: let e be the lowest-index standard basis vector not parallel to k;
    then a_1 = normalize(k x e) and a_2 = normalize(k x a_1).
    """
    k = np.asarray(k, dtype=np.float64)
    e = np.zeros(3)
    for i in range(3):
        axis = np.zeros(3)
        axis[i] = 1.0
        if np.linalg.norm(np.cross(k, axis)) > 0:
            e = axis
            break
    a1 = np.cross(k, e)
    a1 /= np.linalg.norm(a1)
    a2 = np.cross(k, a1)
    a2 /= np.linalg.norm(a2)
    return np.stack([a1, a2])


@dataclass(frozen=True)
class NoiseBasis:
    """Amplitude frames for a set of wavevectors.

    modes holds the positive-half representatives, sorted lexicographically;
    frames[p] holds (a_{k,1}, a_{k,2}) for modes[p].  Frames at -k equal the
    frames at k by construction.
    """

    modes: np.ndarray
    frames: np.ndarray

    def __post_init__(self):
        if self.modes.shape[1:] != (3,) or self.frames.shape != self.modes.shape[:1] + (2, 3):
            raise ValidationError("inconsistent basis arrays")

    def frame(self, k: Sequence[int]) -> np.ndarray:
        """The (2, 3) frame for k, either sign."""
        kk = tuple(int(c) for c in k)
        rep = kk if positive_half(kk) else tuple(-c for c in kk)
        idx = self._index().get(rep)
        if idx is None:
            raise ValidationError(f"mode {kk} is not in this basis")
        return self.frames[idx]

    def _index(self) -> dict:
        cache = getattr(self, "_idx_cache", None)
        if cache is None:
            cache = {tuple(int(c) for c in m): p for p, m in enumerate(self.modes)}
            object.__setattr__(self, "_idx_cache", cache)
        return cache


def build_basis(modes: Iterable[Sequence[int]]) -> NoiseBasis:
    """Construct the fixed amplitude frames for a set of nonzero modes.

    Input modes may come from either half lattice; each conjugate pair is
    stored once under its positive-half representative.
    """
    reps = set()
    for k in modes:
        kk = tuple(int(c) for c in k)
        if len(kk) != 3 or kk == (0, 0, 0):
            raise ValidationError(f"noise modes must be nonzero integer triples, got {kk}")
        reps.add(kk if positive_half(kk) else tuple(-c for c in kk))
    ordered = sorted(reps)
    arr = np.array(ordered, dtype=np.int64).reshape(len(ordered), 3)
    frames = np.stack([_frame_for(m) for m in arr]) if ordered else np.zeros((0, 2, 3))
    return NoiseBasis(modes=arr, frames=frames)


class ThetaSpectrum:
    """Even, nonnegative noise coefficients theta_k on a finite support.

    The support excludes k = 0 and must be symmetric under k -> -k with
    theta_{-k} = theta_k, which is what keeps the assembled noise field real.
    meta carries optional provenance for serialized spectra (shell index n,
    decay exponent, normalization flag).
    """

    def __init__(self, values: dict, meta: dict | None = None):
        self.meta = dict(meta) if meta else {}
        cleaned: dict[tuple[int, int, int], float] = {}
        for k, v in values.items():
            kk = tuple(int(c) for c in k)
            if len(kk) != 3 or kk == (0, 0, 0):
                raise ValidationError(f"theta support must be nonzero triples, got {kk}")
            v = float(v)
            if not math.isfinite(v) or v < 0:
                raise ValidationError(f"theta values must be finite and nonnegative, got {v}")
            if v > 0:
                cleaned[kk] = v
        for k, v in cleaned.items():
            neg = tuple(-c for c in k)
            if cleaned.get(neg) != v:
                raise ValidationError(
                    f"theta must be even: theta at {neg} does not match theta at {k}"
                )
        self.values = cleaned

    def support(self) -> list[tuple[int, int, int]]:
        return sorted(self.values)

    def positive_support(self) -> list[tuple[int, int, int]]:
        return sorted(k for k in self.values if positive_half(k))

    def value(self, k: Sequence[int]) -> float:
        return self.values.get(tuple(int(c) for c in k), 0.0)

    @property
    def max_value(self) -> float:
        return max(self.values.values(), default=0.0)

    @property
    def sum_sq(self) -> float:
        return sum(v * v for v in self.values.values())

    @property
    def max_mode(self) -> int:
        """Largest |k|_inf over the support."""
        return max((max(abs(c) for c in k) for k in self.values), default=0)

    def is_radial(self) -> bool:
        """Whether theta is a function of |k| on full shells.

        True iff for every squared radius present, all lattice vectors of
        that radius are in the support and carry equal values.
        """
        by_r2: dict[int, set] = {}
        vals: dict[int, float] = {}
        for k, v in self.values.items():
            r2 = k[0] ** 2 + k[1] ** 2 + k[2] ** 2
            by_r2.setdefault(r2, set()).add(k)
            if r2 in vals and vals[r2] != v:
                return False
            vals[r2] = v
        for r2, present in by_r2.items():
            if len(present) != _shell_count(r2):
                return False
        return True

    def to_json(self) -> str:
        rows = [[k[0], k[1], k[2], v] for k, v in sorted(self.values.items())]
        return json.dumps({"format": "theta-spectrum", "meta": self.meta, "values": rows})

    @classmethod
    def from_json(cls, text: str) -> "ThetaSpectrum":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"unreadable theta spectrum: {exc}") from exc
        if not isinstance(doc, dict) or doc.get("format") != "theta-spectrum":
            raise ValidationError("not a serialized theta spectrum")
        values = {}
        for row in doc.get("values", []):
            if len(row) != 4:
                raise ValidationError(f"malformed theta row: {row!r}")
            values[(int(row[0]), int(row[1]), int(row[2]))] = float(row[3])
        return cls(values, meta=doc.get("meta"))

    def __eq__(self, other):
        return isinstance(other, ThetaSpectrum) and other.values == self.values

    def __repr__(self):
        return f"ThetaSpectrum(support={len(self.values)} modes)"


def _shell_count(r2: int) -> int:
    """Number of integer lattice vectors with |k|^2 = r2."""
    count = 0
    r = int(math.isqrt(r2))
    for k1 in range(-r, r + 1):
        rem1 = r2 - k1 * k1
        if rem1 < 0:
            continue
        r1 = int(math.isqrt(rem1))
        for k2 in range(-r1, r1 + 1):
            rem2 = rem1 - k2 * k2
            if rem2 < 0:
                continue
            s = int(math.isqrt(rem2))
            if s * s == rem2:
                count += 1 if s == 0 else 2
    return count


def theta_shell(n: int, alpha_decay: float = 1.0) -> ThetaSpectrum:
    """Shell coefficients |k|^(-alpha_decay) on n <= |k| <= 2n, normalized.

    All lattice vectors with n^2 <= |k|^2 <= 4 n^2 carry |k|^(-alpha_decay),
    then the whole family is scaled so that sum_k theta_k^2 = 1.  The l-infty
    norm of the resulting sequence strictly decreases along n.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValidationError(f"shell parameter must be a positive integer, got {n!r}")
    if not math.isfinite(alpha_decay) or alpha_decay < 0:
        raise ValidationError(f"decay exponent must be finite and >= 0, got {alpha_decay}")
    n = int(n)
    raw = {}
    lim = 2 * n
    for k1 in range(-lim, lim + 1):
        for k2 in range(-lim, lim + 1):
            for k3 in range(-lim, lim + 1):
                r2 = k1 * k1 + k2 * k2 + k3 * k3
                if n * n <= r2 <= 4 * n * n:
                    raw[(k1, k2, k3)] = float(r2) ** (-alpha_decay / 2.0)
    norm = math.sqrt(sum(v * v for v in raw.values()))
    meta = {"n": n, "alpha_decay": alpha_decay, "normalized": True}
    return ThetaSpectrum({k: v / norm for k, v in raw.items()}, meta=meta)


@dataclass(frozen=True)
class BrownianDriver:
    """Counter-addressed Gaussian streams for reproducible sampling.

    Every (purpose, sample, step) triple owns an independent Philox stream,
    so draws do not depend on evaluation order or worker scheduling.
    Purpose 0 is reserved for Brownian increments and purpose 1 for initial
    data; other purposes are free for callers.
    """

    seed: int

    PURPOSE_NOISE = 0
    PURPOSE_INITIAL = 1

    def normals(self, purpose: int, sample: int, step: int, shape) -> np.ndarray:
        """Standard normal draws for one addressed stream."""
        key = (int(self.seed) % 2**64, 0x9E3779B97F4A7C15)
        counter = (int(purpose) % 2**64, 0, int(sample) % 2**64, int(step) % 2**64)
        bitgen = np.random.Philox(counter=counter, key=key)
        return np.random.Generator(bitgen).standard_normal(shape)


class TransportNoise:
    """Bundle of grid, coefficients, frames, and precomputed corrector data.

    Args:
        grid: spectral lattice.
        theta: even coefficient spectrum; its support fixes the active modes.
        mu: noise strength multiplying the transport intensity 3 mu / 2.

    The constructor enforces N > 2 K + max|k|_inf(supp theta).  Under that
    bound a product mode j + k with |j|_inf <= K either stays on the stored
    lattice or wraps to a slot outside the de-alias band, so the roll-and-
    gather assembly used here never aliases a dropped mode onto a retained
    one.
    """

    def __init__(self, grid: Grid, theta: ThetaSpectrum, mu: float = 1.0):
        if mu < 0 or not math.isfinite(mu):
            raise ValidationError(f"noise strength mu must be finite and >= 0, got {mu}")
        if not theta.values:
            raise ValidationError("theta spectrum has empty support")
        kmax = theta.max_mode
        if grid.N <= 2 * grid.K + kmax:
            raise ValidationError(
                f"grid N={grid.N} too small for noise modes up to |k|_inf={kmax}: "
                f"need N > 2K + {kmax} = {2 * grid.K + kmax}"
            )
        self.grid = grid
        self.theta = theta
        self.mu = float(mu)
        self.basis = build_basis(theta.support())
        pos = self.basis.modes
        self.pos_modes = pos
        self.theta_pos = np.array(
            [theta.value(tuple(m)) for m in pos], dtype=np.float64
        )
        N = grid.N
        self._idx_pos = np.ravel_multi_index((pos[:, 0] % N, pos[:, 1] % N, pos[:, 2] % N), (N, N, N))
        neg = -pos
        self._idx_neg = np.ravel_multi_index((neg[:, 0] % N, neg[:, 1] % N, neg[:, 2] % N), (N, N, N))
        self._corrector_band: np.ndarray | None = None

    @property
    def n_pairs(self) -> int:
        return len(self.pos_modes)

    def draw_increments(self, driver: BrownianDriver, sample: int, step: int, dt: float) -> np.ndarray:
        """Brownian increments for one step, shape (P, 2, 2).

        Axis 1 is the frame index alpha, axis 2 holds (Delta B^{k,alpha},
        Delta B^{-k,alpha}); the complex increment of W^{k,alpha} is
        out[..., 0] + i out[..., 1].  Modes follow the sorted positive-half
        order of the basis.
        """
        if dt <= 0:
            raise ValidationError(f"dt must be positive, got {dt}")
        z = driver.normals(BrownianDriver.PURPOSE_NOISE, sample, step, (self.n_pairs, 2, 2))
        return z * math.sqrt(dt)

    # Corrector assembly.  For each retained mode j the corrector is the
    # 3x3 map M(j) = -(3 mu / 2)(2 pi)^2 sum_k theta_k^2 w_k(j) P_j P_{j+k}
    # restricted to terms with |j+k|_inf <= K, where w_k(j) collapses the
    # alpha sum to |j|^2 - (k.j)^2/|k|^2.  Matrices are built once at mu = 1
    # on the de-alias band and scaled at use.

    def corrector_matrices(self) -> np.ndarray:
        """Corrector maps at mu = 1 on the band, shape (M_band, 3, 3).

        Exact for any even spectrum: the frame sum collapses per k, no
        radial symmetry needed (that only enters the n -> infinity limit).
        """
        if self._corrector_band is None:
            self._corrector_band = self._build_corrector()
        return self._corrector_band

    def _build_corrector(self) -> np.ndarray:
        g = self.grid
        N = g.N
        jm = g.band_modes.astype(np.float64)
        nb = len(jm)
        j2 = np.einsum("ma,ma->m", jm, jm)
        P_flat = g.projectors
        mask_flat = g.dealias_mask.ravel()
        T = np.zeros((nb, 3, 3))
        band_int = g.band_modes
        for p in range(self.n_pairs):
            k = self.pos_modes[p]
            th2 = self.theta_pos[p] ** 2
            kf = k.astype(np.float64)
            k2 = float(kf @ kf)
            w = th2 * (j2 - (jm @ kf) ** 2 / k2)
            for sign in (1, -1):
                out = band_int + sign * k
                idx = np.ravel_multi_index(
                    (out[:, 0] % N, out[:, 1] % N, out[:, 2] % N), (N, N, N)
                )
                keep = mask_flat[idx]
                wk = np.where(keep, w, 0.0)
                T += wk[:, None, None] * P_flat[idx]
        P_band = P_flat[g.band_indices]
        M = np.matmul(P_band, T)
        M *= -1.5 * TWO_PI**2
        return M


def transport_mode_apply(field: SpectralField, k: Sequence[int], alpha: int) -> SpectralField:
    """One transport term: the de-aliased projection of (sigma_{k,alpha} . grad) v.

    The output coefficient at mode j + k is
    2 pi i (a_{k,alpha} . j) P_{j+k} vhat(j), and a term is dropped exactly
    when |j + k|_inf > K.  Works for k from either half lattice (the frame
    at -k equals the frame at k).

    Args:
        field: input field v.
        k: nonzero integer wavevector.
        alpha: frame index, 1 or 2.
    """
    g = field.grid
    kk = tuple(int(c) for c in k)
    if kk == (0, 0, 0):
        raise ValidationError("transport mode k must be nonzero")
    if alpha not in (1, 2):
        raise ValidationError(f"frame index alpha must be 1 or 2, got {alpha}")
    a = build_basis([kk]).frame(kk)[alpha - 1]
    w = TWO_PI * 1j * (a[0] * g.kx + a[1] * g.ky + a[2] * g.kz)
    t = field.coeffs * w[..., None]
    keep = (
        (np.abs(g.kx + kk[0]) <= g.K)
        & (np.abs(g.ky + kk[1]) <= g.K)
        & (np.abs(g.kz + kk[2]) <= g.K)
    )
    t = t * keep[..., None]
    shifted = np.roll(t, shift=kk, axis=(0, 1, 2))
    return helmholtz_project(SpectralField(g, shifted))


def noise_increment_field(
    field: SpectralField,
    noise: TransportNoise,
    increments: np.ndarray,
    method: str = "fast",
) -> SpectralField:
    """Assemble the noise increment sum_{k,alpha} sqrt(3 mu / 2) theta_k
    T_K P[(sigma_{k,alpha} . grad) v] Delta W^{k,alpha}.

    Two routes compute the same field.  "fast" builds the real random field
    Delta X = sum theta sigma Delta W once and forms the de-aliased projected
    divergence of v tensor Delta X pseudo-spectrally; "permode" sums the
    individual transport terms.  They agree to rounding because the grid
    bound enforced by TransportNoise makes the product alias-free.

    Args:
        field: current state v (assumed de-aliased).
        noise: the noise bundle.
        increments: array from TransportNoise.draw_increments, shape (P, 2, 2).
        method: "fast" or "permode".
    """
    g = field.grid
    if increments.shape != (noise.n_pairs, 2, 2):
        raise ValidationError(
            f"increments must have shape {(noise.n_pairs, 2, 2)}, got {increments.shape}"
        )
    scale = math.sqrt(1.5 * noise.mu)
    if method == "permode":
        out = np.zeros_like(field.coeffs)
        for p in range(noise.n_pairs):
            k = tuple(int(c) for c in noise.pos_modes[p])
            th = noise.theta_pos[p]
            for alpha in (1, 2):
                dW = increments[p, alpha - 1, 0] + 1j * increments[p, alpha - 1, 1]
                term = transport_mode_apply(field, k, alpha).coeffs
                nterm = transport_mode_apply(field, tuple(-c for c in k), alpha).coeffs
                out += th * (term * dW + nterm * np.conj(dW))
        return SpectralField(g, scale * out)
    if method != "fast":
        raise ValidationError(f"unknown noise assembly method {method!r}")

    dW = increments[:, :, 0] + 1j * increments[:, :, 1]
    coef = np.einsum("p,pad,pa->pd", noise.theta_pos, noise.basis.frames, dW)
    Xhat = np.zeros((g.N,) * 3 + (3,), dtype=np.complex128)
    Xf = Xhat.reshape(-1, 3)
    Xf[noise._idx_pos] = coef
    Xf[noise._idx_neg] = np.conj(coef)
    X = scipy.fft.ifftn(Xhat, axes=(0, 1, 2), norm="forward").real
    V = field.to_physical()
    prod = V[..., :, None] * X[..., None, :]
    phat = scipy.fft.fftn(prod, axes=(0, 1, 2), norm="forward")
    div = TWO_PI * 1j * (
        g.kx[..., None] * phat[..., 0]
        + g.ky[..., None] * phat[..., 1]
        + g.kz[..., None] * phat[..., 2]
    )
    out = dealias(helmholtz_project(SpectralField(g, div)))
    return SpectralField(g, scale * out.coeffs)


def corrector_apply(field: SpectralField, noise: TransportNoise) -> SpectralField:
    """Apply the Ito corrector of the transport noise to a field.

    Modewise matrix multiplication by the precomputed corrector maps; the
    coefficient spectrum must be radial.
    """
    g = field.grid
    if g != noise.grid:
        raise ValidationError("field and noise live on different grids")
    M = noise.corrector_matrices()
    flat = field.coeffs.reshape(-1, 3)
    out = np.zeros_like(flat)
    band = g.band_indices
    out[band] = noise.mu * np.einsum("mab,mb->ma", M, flat[band])
    return SpectralField(g, out.reshape(field.coeffs.shape))


def noise_energy_rate(field: SpectralField, noise: TransportNoise) -> float:
    """Energy injection rate of the Ito noise at state v.

    The quadratic variation of the noise integral grows, per unit time, by
    the sum over the underlying real Brownian directions of the squared L^2
    norms of their coefficient fields.  With the complex pairing (each pair
    carries E|Delta W|^2 = 2 dt) that equals

        3 mu sum_{k in supp theta, alpha} theta_k^2
             || T_K P[(sigma_{k,alpha} . grad) v] ||^2.

    Computed by direct modewise summation with the collapsed alpha sum; no
    code is shared with corrector_apply, so the energy-neutrality identity
    2 <C v, v> + rate = 0 is a genuine cross-check of the two assemblies.
    """
    g = field.grid
    if g != noise.grid:
        raise ValidationError("field and noise live on different grids")
    N = g.N
    band = g.band_indices
    vb = field.coeffs.reshape(-1, 3)[band]
    jm = g.band_modes.astype(np.float64)
    j2 = np.einsum("ma,ma->m", jm, jm)
    P_flat = g.projectors
    mask_flat = g.dealias_mask.ravel()
    band_int = g.band_modes
    total = 0.0
    for p in range(noise.n_pairs):
        k = noise.pos_modes[p]
        th2 = noise.theta_pos[p] ** 2
        kf = k.astype(np.float64)
        w = j2 - (jm @ kf) ** 2 / float(kf @ kf)
        for sign in (1, -1):
            out = band_int + sign * k
            idx = np.ravel_multi_index((out[:, 0] % N, out[:, 1] % N, out[:, 2] % N), (N, N, N))
            keep = mask_flat[idx]
            q = np.einsum("mab,ma,mb->m", P_flat[idx], np.conj(vb), vb).real
            total += th2 * float(np.sum(np.where(keep, w * q, 0.0)))
    return 3.0 * noise.mu * TWO_PI**2 * total


def corrector_limit_error(
    j: Sequence[int], a: Sequence[float], n: int, mu: float = 1.0, alpha_decay: float = 1.0
) -> float:
    """Distance of the shell corrector from its large-n limit at one mode.

    Evaluates the exact lattice sum of the corrector for
    theta_shell(n, alpha_decay) at mode j with amplitude a (required
    orthogonal to j), with no grid and no truncation, and returns the
    relative Euclidean error against the limit map
    -(3 mu / 5)(2 pi)^2 |j|^2 a.  The value is independent of mu.
    """
    j = np.asarray([int(c) for c in j], dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (3,) or j.shape != (3,):
        raise ValidationError("mode and amplitude must be 3-vectors")
    j2 = float(j @ j)
    if j2 == 0:
        raise ValidationError("mode j must be nonzero")
    if abs(float(j @ a)) > 1e-12 * max(1.0, float(np.linalg.norm(a))) * math.sqrt(j2):
        raise ValidationError("amplitude must be orthogonal to the mode")
    if float(a @ a) == 0.0:
        raise ValidationError("amplitude must be nonzero")
    theta = theta_shell(n, alpha_decay)
    ks = np.array(theta.support(), dtype=np.float64)
    th2 = np.array([theta.value(tuple(int(c) for c in k)) ** 2 for k in ks])
    k2 = np.einsum("ka,ka->k", ks, ks)
    w = th2 * (j2 - (ks @ j) ** 2 / k2)
    out = ks + j[None, :]
    out2 = np.einsum("ka,ka->k", out, out)
    safe = np.where(out2 > 0, out2, 1.0)
    Pa = a[None, :] - out * ((out @ a) / safe)[:, None]
    Pa[out2 == 0] = a
    t = np.einsum("k,ka->a", w, Pa)
    t -= j * float(j @ t) / j2
    result = -1.5 * mu * TWO_PI**2 * t
    target = -0.6 * mu * TWO_PI**2 * j2 * a
    return float(np.linalg.norm(result - target) / np.linalg.norm(target))


def real_noise_covariance_check(
    noise: TransportNoise,
    driver: BrownianDriver,
    nsamples: int,
    dt: float = 1.0,
) -> np.ndarray:
    """Empirical covariance of the real Brownian pair behind each W^{k,alpha}.

    For each positive-half mode and frame index, draws nsamples increments
    through the addressed streams and returns the 2x2 sample covariance of
    (Delta B^{k,alpha}, Delta B^{-k,alpha}) divided by dt, as an array of
    shape (P, 2, 2, 2).  Diagonals near 1 confirm that the complex pairing
    carries exactly the quadratic variation of the real-field formulation
    with matched intensity (the two formulations of the noise differ by a
    change of basis with ratio one); off-diagonals near 0 confirm the
    independence of the pair.
    """
    if nsamples < 2:
        raise ValidationError("covariance check needs at least 2 samples")
    draws = np.empty((nsamples, noise.n_pairs, 2, 2))
    for s in range(nsamples):
        draws[s] = noise.draw_increments(driver, sample=s, step=0, dt=dt)
    mean = draws.mean(axis=0)
    centered = draws - mean
    cov = np.einsum("spai,spaj->paij", centered, centered) / ((nsamples - 1) * dt)
    return cov
