"""Spectral representation of periodic vector fields on the unit torus.

Conventions, fixed once for the whole package:

* The domain is [0, 1]^3 with frequencies k in Z^3, so a field is
  u(x) = sum_k uhat(k) exp(2 pi i k . x).  Gradients therefore carry a
  factor 2 pi i k, while the fractional dissipation (-Delta)^gamma is used
  with the literal symbol |k|^(2 gamma) (no 2 pi).
* Coefficients live on the discrete lattice in numpy FFT order: index i
  along an axis holds frequency i for i < N/2 and i - N for i >= N/2.
  The forward transform is normalized so that uhat = fftn(u) / N^3, hence
  Parseval reads ||u||_{L^2}^2 = sum_k |uhat(k)|^2.
* Quadratic products are de-aliased by the max-norm cutoff K = floor(N/3):
  every operation that could populate modes with |k|_inf > K zeroes them.

A field is real iff uhat(-k) = conj(uhat(k)); constructors either enforce or
check that symmetry.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.fft

from .errors import ValidationError

__all__ = [
    "Grid",
    "SpectralField",
    "MultiplierOp",
    "field_from_modes",
    "field_from_physical",
    "helmholtz_project",
    "fractional_laplacian",
    "constant_drift",
    "dealias",
    "mean",
    "subtract_mean",
    "l2_norm",
    "l2_inner",
    "sobolev_norm",
    "besov_norm",
    "besov_block_index",
    "save_snapshot",
    "load_snapshot",
]


class Grid:
    """Cubic Fourier lattice for an N^3 collocation grid.

    Args:
        N: number of collocation points per axis.  Must be even and >= 8 so
           that the de-alias band K = floor(N/3) is nonempty and the Nyquist
           plane is a single slot.

    Attributes:
        N: grid size.
        K: de-alias cutoff, floor(N/3); retained modes satisfy |k|_inf <= K.
        kx, ky, kz: integer frequency arrays broadcastable to (N, N, N).
        k2: |k|^2 as an integer array of shape (N, N, N).
        dealias_mask: boolean (N, N, N), True where |k|_inf <= K.
    """

    def __init__(self, N: int):
        if not isinstance(N, (int, np.integer)):
            raise ValidationError(f"grid size must be an integer, got {N!r}")
        N = int(N)
        if N < 8 or N % 2 != 0:
            raise ValidationError(f"grid size must be even and >= 8, got {N}")
        self.N = N
        self.K = N // 3
        freqs = np.fft.fftfreq(N, d=1.0 / N).astype(np.int64)
        self.kx = freqs[:, None, None]
        self.ky = freqs[None, :, None]
        self.kz = freqs[None, None, :]
        self.k2 = self.kx**2 + self.ky**2 + self.kz**2
        self.dealias_mask = (
            (np.abs(self.kx) <= self.K)
            & (np.abs(self.ky) <= self.K)
            & (np.abs(self.kz) <= self.K)
        )
        self._cache: dict = {}

    def __eq__(self, other):
        return isinstance(other, Grid) and other.N == self.N

    def __hash__(self):
        return hash(("Grid", self.N))

    def __repr__(self):
        return f"Grid(N={self.N})"

    def index_of(self, k: Sequence[int]) -> tuple[int, int, int]:
        """Lattice slot of an integer frequency triple (mod N)."""
        return tuple(int(c) % self.N for c in k)  # type: ignore[return-value]

    def mode_of_index(self, idx: Sequence[int]) -> tuple[int, int, int]:
        """Signed frequency stored at a lattice slot."""
        out = []
        for c in idx:
            c = int(c) % self.N
            out.append(c if c < self.N // 2 else c - self.N)
        return tuple(out)  # type: ignore[return-value]

    # Cached derived arrays.  The grid is tiny (N <= 128 in practice) so
    # everything is materialized on first use and kept.

    @property
    def band_indices(self) -> np.ndarray:
        """Flat indices (into an (N^3,) view) of the de-alias band."""
        if "band_indices" not in self._cache:
            self._cache["band_indices"] = np.flatnonzero(self.dealias_mask.ravel())
        return self._cache["band_indices"]

    @property
    def band_modes(self) -> np.ndarray:
        """Signed frequencies of the de-alias band, shape (M, 3) int64."""
        if "band_modes" not in self._cache:
            kx = np.broadcast_to(self.kx, (self.N,) * 3).ravel()
            ky = np.broadcast_to(self.ky, (self.N,) * 3).ravel()
            kz = np.broadcast_to(self.kz, (self.N,) * 3).ravel()
            b = self.band_indices
            self._cache["band_modes"] = np.stack([kx[b], ky[b], kz[b]], axis=1)
        return self._cache["band_modes"]

    @property
    def projectors(self) -> np.ndarray:
        """Leray projector P(k) = I - k k^T / |k|^2 at every slot.

        Shape (N^3, 3, 3) float64, flattened in C order.  The k = 0 slot
        holds the identity (the mean is untouched by projection).
        """
        if "projectors" not in self._cache:
            kx = np.broadcast_to(self.kx, (self.N,) * 3).ravel().astype(np.float64)
            ky = np.broadcast_to(self.ky, (self.N,) * 3).ravel().astype(np.float64)
            kz = np.broadcast_to(self.kz, (self.N,) * 3).ravel().astype(np.float64)
            kvec = np.stack([kx, ky, kz], axis=1)
            k2 = np.einsum("ma,ma->m", kvec, kvec)
            k2safe = np.where(k2 > 0, k2, 1.0)
            P = -np.einsum("ma,mb->mab", kvec, kvec) / k2safe[:, None, None]
            P[:, 0, 0] += 1.0
            P[:, 1, 1] += 1.0
            P[:, 2, 2] += 1.0
            P[k2 == 0] = np.eye(3)
            self._cache["projectors"] = P
        return self._cache["projectors"]


@dataclass
class SpectralField:
    """A vector field stored by its Fourier coefficients.

    coeffs has shape (N, N, N, 3) complex128 in FFT order; component index
    last.  Instances are cheap wrappers; arithmetic returns new fields.
    """

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        expected = (self.grid.N,) * 3 + (3,)
        if self.coeffs.shape != expected:
            raise ValidationError(
                f"coefficient array must have shape {expected}, got {self.coeffs.shape}"
            )
        if self.coeffs.dtype != np.complex128:
            self.coeffs = self.coeffs.astype(np.complex128)

    def copy(self) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs.copy())

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check_same_grid(other)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check_same_grid(other)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, scalar) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs * complex(scalar))

    __rmul__ = __mul__

    def _check_same_grid(self, other: "SpectralField") -> None:
        if other.grid != self.grid:
            raise ValidationError("fields live on different grids")

    def to_physical(self) -> np.ndarray:
        """Collocation values, shape (N, N, N, 3) float64."""
        u = scipy.fft.ifftn(self.coeffs, axes=(0, 1, 2), norm="forward")
        return np.ascontiguousarray(u.real)

    def is_real(self, tol: float = 1e-12) -> bool:
        """True when the coefficients satisfy conjugate symmetry to tol."""
        c = self.coeffs
        flipped = np.conj(c[_flip_index(self.grid.N)])
        scale = np.max(np.abs(c)) or 1.0
        return bool(np.max(np.abs(c - flipped)) <= tol * scale)

    def divergence_sup(self) -> float:
        """Max over modes of |k . uhat(k)|, zero for divergence-free fields."""
        g = self.grid
        div = (
            g.kx * self.coeffs[..., 0]
            + g.ky * self.coeffs[..., 1]
            + g.kz * self.coeffs[..., 2]
        )
        return float(np.max(np.abs(div)))


def _flip_index(N: int):
    """Index arrays mapping slot k to slot -k (mod N), per axis."""
    idx = (-np.arange(N)) % N
    return np.ix_(idx, idx, idx)


def field_from_physical(grid: Grid, u: np.ndarray) -> SpectralField:
    """Transform real collocation values (N, N, N, 3) into a SpectralField."""
    expected = (grid.N,) * 3 + (3,)
    if u.shape != expected:
        raise ValidationError(f"expected physical array of shape {expected}, got {u.shape}")
    c = scipy.fft.fftn(np.asarray(u, dtype=np.float64), axes=(0, 1, 2), norm="forward")
    return SpectralField(grid, np.ascontiguousarray(c))


def field_from_modes(
    grid: Grid, modes: Iterable[tuple[Sequence[int], Sequence[complex]]]
) -> SpectralField:
    """Build a real field from a list of (k, coefficient) pairs.

    For every listed mode the conjugate at -k is filled in automatically, so
    a one-sided list produces a real field.  Listing both k and -k is allowed
    only when the two coefficients are exact conjugates.

    Args:
        grid: target lattice.
        modes: iterable of (k, a) with k an integer triple, |k_i| <= N/2,
            and a a length-3 complex coefficient.

    Raises:
        ValidationError: for out-of-range frequencies, duplicate slots,
            conjugate-symmetry violations, or a non-real coefficient on a
            self-conjugate slot (k = 0 and Nyquist combinations).
    """
    N = grid.N
    coeffs = np.zeros((N, N, N, 3), dtype=np.complex128)
    seen: dict[tuple[int, int, int], tuple[tuple[int, ...], np.ndarray]] = {}
    if isinstance(modes, dict):
        modes = modes.items()
    for k, a in modes:
        k = tuple(int(c) for c in k)
        if len(k) != 3:
            raise ValidationError(f"frequency must be a triple, got {k}")
        if any(abs(c) > N // 2 for c in k):
            raise ValidationError(
                f"mode {k} has a component beyond the Nyquist frequency N/2 = {N // 2}"
            )
        a = np.asarray(a, dtype=np.complex128)
        if a.shape != (3,):
            raise ValidationError(f"coefficient for mode {k} must be a 3-vector")
        slot = grid.index_of(k)
        cslot = grid.index_of(tuple(-c for c in k))
        if slot in seen:
            prev_k, prev_a = seen[slot]
            if prev_k != k or not np.array_equal(prev_a, a):
                raise ValidationError(f"conflicting values for lattice slot of mode {k}")
            continue
        if slot == cslot:
            if np.any(a.imag != 0.0):
                raise ValidationError(
                    f"mode {k} is self-conjugate and must have a real coefficient"
                )
        elif cslot in seen:
            _, partner = seen[cslot]
            if not np.array_equal(partner, np.conj(a)):
                raise ValidationError(
                    f"modes {k} and {tuple(-c for c in k)} violate conjugate symmetry"
                )
        coeffs[slot] = a
        coeffs[cslot] = np.conj(a)
        seen[slot] = (k, a)
    return SpectralField(grid, coeffs)


class MultiplierOp:
    """A Fourier multiplier, scalar or 3x3 matrix valued.

    Args:
        symbol: callable taking the integer frequency arrays (kx, ky, kz)
            and returning either an array broadcastable to (N, N, N) or one
            of shape (N, N, N, 3, 3); matrix symbols act on the component
            index.
    """

    def __init__(self, symbol: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]):
        self.symbol = symbol

    def apply(self, field: SpectralField) -> SpectralField:
        g = field.grid
        w = np.asarray(self.symbol(g.kx, g.ky, g.kz))
        if w.ndim >= 2 and w.shape[-2:] == (3, 3):
            out = np.einsum("...ab,...b->...a", w, field.coeffs)
        else:
            out = field.coeffs * w[..., None]
        return SpectralField(g, out)


def helmholtz_project(field: SpectralField) -> SpectralField:
    """Leray projection onto divergence-free fields.

    Modewise uhat(k) -> uhat(k) - k (k . uhat(k)) / |k|^2; the mean mode is
    left untouched.
    """
    g = field.grid
    c = field.coeffs
    kd = g.kx * c[..., 0] + g.ky * c[..., 1] + g.kz * c[..., 2]
    k2 = np.where(g.k2 > 0, g.k2, 1).astype(np.float64)
    factor = kd / k2
    out = c.copy()
    out[..., 0] -= factor * g.kx
    out[..., 1] -= factor * g.ky
    out[..., 2] -= factor * g.kz
    zero = g.index_of((0, 0, 0))
    out[zero] = c[zero]
    return SpectralField(g, out)


def fractional_laplacian(field: SpectralField, gamma: float) -> SpectralField:
    """Apply (-Delta)^gamma with the literal symbol |k|^(2 gamma)."""
    if gamma < 0:
        raise ValidationError(f"gamma must be nonnegative, got {gamma}")
    g = field.grid
    w = np.float_power(g.k2.astype(np.float64), gamma)
    if gamma == 0:
        w = np.ones_like(w)
    else:
        w[g.k2 == 0] = 0.0
    return SpectralField(g, field.coeffs * w[..., None])


def constant_drift(field: SpectralField, w: Sequence[float]) -> SpectralField:
    """Apply the advection (w . grad) by a constant vector w.

    The symbol is 2 pi i (w . k) per the gradient convention.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (3,):
        raise ValidationError("drift vector must have length 3")
    g = field.grid
    phase = 2.0j * np.pi * (w[0] * g.kx + w[1] * g.ky + w[2] * g.kz)
    return SpectralField(g, field.coeffs * phase[..., None])


def dealias(field: SpectralField) -> SpectralField:
    """Zero every mode with |k|_inf > K."""
    out = field.coeffs * field.grid.dealias_mask[..., None]
    return SpectralField(field.grid, out)


def mean(field: SpectralField) -> np.ndarray:
    """The spatial mean, i.e. the k = 0 coefficient, as a real 3-vector."""
    zero = field.grid.index_of((0, 0, 0))
    return np.ascontiguousarray(field.coeffs[zero].real)


def subtract_mean(field: SpectralField) -> SpectralField:
    out = field.coeffs.copy()
    out[field.grid.index_of((0, 0, 0))] = 0.0
    return SpectralField(field.grid, out)


def l2_norm(field: SpectralField) -> float:
    """L^2 norm via Parseval."""
    return float(np.sqrt(np.sum(np.abs(field.coeffs) ** 2)))


def l2_inner(f: SpectralField, g: SpectralField) -> float:
    """L^2 inner product of two real fields."""
    f._check_same_grid(g)
    return float(np.real(np.sum(np.conj(f.coeffs) * g.coeffs)))


def sobolev_norm(field: SpectralField, s: float) -> float:
    """Inhomogeneous Sobolev norm (sum (1 + |k|^2)^s |uhat|^2)^(1/2)."""
    g = field.grid
    w = (1.0 + g.k2.astype(np.float64)) ** s
    return float(np.sqrt(np.sum(w[..., None] * np.abs(field.coeffs) ** 2)))


def besov_block_index(k2: np.ndarray) -> np.ndarray:
    """Littlewood-Paley block index for squared frequencies.

    Block 0 holds |k| <= 1; block j >= 1 holds 2^(j-1) < |k| <= 2^j, decided
    by the exact integer test 4^(j-1) < |k|^2 <= 4^j.
    """
    k2 = np.asarray(k2)
    out = np.zeros(k2.shape, dtype=np.int64)
    j = 1
    while 4 ** (j - 1) < int(k2.max(initial=0)):
        out[k2 > 4 ** (j - 1)] = j
        j += 1
    return out


def besov_norm(field: SpectralField, s: float, p: float) -> float:
    """Besov norm with L^2 blocks and an l^p sum over dyadic shells.

    ||f|| = (sum_j (2^(j s) ||Delta_j f||_{L^2})^p)^(1/p) where Delta_j
    restricts to the j-th block of besov_block_index.

    Args:
        field: the field to measure.
        s: regularity index.
        p: summability index, must lie in (1, inf).
    """
    if not (1.0 < p < np.inf):
        raise ValidationError(f"besov summability index must be in (1, inf), got {p}")
    g = field.grid
    blocks = besov_block_index(g.k2)
    energy = np.sum(np.abs(field.coeffs) ** 2, axis=-1)
    nblocks = int(blocks.max()) + 1
    block_energy = np.bincount(blocks.ravel(), weights=energy.ravel(), minlength=nblocks)
    block_l2 = np.sqrt(block_energy)
    weights = 2.0 ** (s * np.arange(nblocks))
    return float(np.sum((weights * block_l2) ** p) ** (1.0 / p))


# Snapshot persistence.  A snapshot stores the nonredundant half of the
# lattice as text: one row per stored mode with the mode's three integer
# frequencies and the real and imaginary parts of the three components.
# Floats are written with repr, which round-trips bit-exactly.

_SNAPSHOT_HEADER = "k1,k2,k3,re_u1,im_u1,re_u2,im_u2,re_u3,im_u3"


def _canonical(k: tuple[int, int, int], N: int) -> bool:
    """Whether slot k is stored in a snapshot.

    Self-conjugate slots (every component 0 or -N/2) are stored.  Of each
    remaining conjugate pair the member whose first component differing
    from a self-conjugate value is positive is stored.
    """
    if all(c in (0, -N // 2) for c in k):
        return True
    for c in k:
        if c in (0, -N // 2):
            continue
        return c > 0
    return True


def save_snapshot(field: SpectralField, path) -> None:
    """Write a bit-exact text snapshot of the field.

    Only canonical representatives of conjugate pairs are stored, and only
    modes with a nonzero coefficient.  Rows are sorted by frequency so a
    given field always produces identical bytes.
    """
    g = field.grid
    meta = {"format": "torusflow-snapshot", "version": 1, "N": g.N}
    rows = []
    nz = np.argwhere(np.any(field.coeffs != 0, axis=-1))
    for idx in nz:
        k = g.mode_of_index(idx)
        if not _canonical(k, g.N):
            continue
        a = field.coeffs[tuple(idx)]
        rows.append((k, a))
    rows.sort(key=lambda item: item[0])
    lines = ["# " + json.dumps(meta, sort_keys=True), _SNAPSHOT_HEADER]
    for k, a in rows:
        parts = [str(k[0]), str(k[1]), str(k[2])]
        for comp in a:
            parts.append(repr(float(comp.real)))
            parts.append(repr(float(comp.imag)))
        lines.append(",".join(parts))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_snapshot(path) -> SpectralField:
    """Read a snapshot written by save_snapshot.

    Raises ValidationError on a malformed header, an unknown format, or rows
    that are not canonical representatives.
    """
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].startswith("# "):
        raise ValidationError(f"{path}: missing snapshot metadata line")
    try:
        meta = json.loads(lines[0][2:])
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: unreadable snapshot metadata: {exc}") from exc
    if meta.get("format") != "torusflow-snapshot":
        raise ValidationError(f"{path}: not a torusflow snapshot")
    grid = Grid(meta["N"])
    if len(lines) < 2 or lines[1] != _SNAPSHOT_HEADER:
        raise ValidationError(f"{path}: unexpected snapshot column header")
    coeffs = np.zeros((grid.N,) * 3 + (3,), dtype=np.complex128)
    for ln in lines[2:]:
        if not ln:
            continue
        parts = ln.split(",")
        if len(parts) != 9:
            raise ValidationError(f"{path}: malformed snapshot row: {ln!r}")
        k = tuple(int(p) for p in parts[:3])
        if any(abs(c) > grid.N // 2 for c in k):
            raise ValidationError(f"{path}: snapshot mode {k} outside the lattice")
        if not _canonical(k, grid.N):
            raise ValidationError(f"{path}: snapshot row for non-canonical mode {k}")
        vals = [float(p) for p in parts[3:]]
        a = np.array(
            [vals[0] + 1j * vals[1], vals[2] + 1j * vals[3], vals[4] + 1j * vals[5]]
        )
        slot = grid.index_of(k)
        cslot = grid.index_of(tuple(-c for c in k))
        coeffs[slot] = a
        if cslot != slot:
            coeffs[cslot] = np.conj(a)
        elif np.any(a.imag != 0.0):
            raise ValidationError(f"{path}: self-conjugate mode {k} must be real")
    return SpectralField(grid, coeffs)
