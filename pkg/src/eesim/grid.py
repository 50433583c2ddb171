"""Periodic grid on T³ = [−π, π)³, Fourier differentiation and Sobolev norms.

Array conventions: a field is a float64 array whose last three axes are the
grid axes (x¹, x², x³); any leading axes are component indices.  All
operators below act on the trailing axes only, so stacked tensor components
are differentiated in one batched transform.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import BinaryIO, Iterator

import numpy as np

AXES = (-3, -2, -1)


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class PeriodicGrid:
    n: int

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 4 or self.n % 2:
            raise GridError(f"grid size must be an even integer >= 4, got {self.n!r}")

    @property
    def spacing(self) -> float:
        return 2.0 * math.pi / self.n

    @property
    def shape(self) -> tuple:
        return (self.n, self.n, self.n)

    @property
    def cell_volume(self) -> float:
        return self.spacing ** 3

    @property
    def volume(self) -> float:
        return (2.0 * math.pi) ** 3

    @cached_property
    def x1d(self) -> np.ndarray:
        return -math.pi + self.spacing * np.arange(self.n)

    @cached_property
    def coords(self) -> np.ndarray:
        """Coordinates as an array of shape (3, n, n, n), indexing 'ij'."""
        return np.array(np.meshgrid(self.x1d, self.x1d, self.x1d, indexing="ij"))

    @cached_property
    def _k(self):
        n = self.n
        kf = np.fft.fftfreq(n, d=1.0 / n)
        kr = np.fft.rfftfreq(n, d=1.0 / n)
        # The Nyquist mode has no well defined odd derivative on a real grid.
        kf_odd = kf.copy()
        kf_odd[n // 2] = 0.0
        kr_odd = kr.copy()
        kr_odd[-1] = 0.0
        k1 = kf_odd[:, None, None]
        k2 = kf_odd[None, :, None]
        k3 = kr_odd[None, None, :]
        return k1, k2, k3

    @cached_property
    def ik(self) -> tuple:
        """Multipliers i·k_j broadcast to the rfft mode array shape."""
        shape = (self.n, self.n, self.n // 2 + 1)
        return tuple(np.broadcast_to(1j * k, shape).copy() for k in self._k)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        n = self.n
        kf = np.abs(np.fft.fftfreq(n, d=1.0 / n))
        kr = np.abs(np.fft.rfftfreq(n, d=1.0 / n))
        cut = n / 3.0
        return ((kf[:, None, None] < cut) & (kf[None, :, None] < cut) & (kr[None, None, :] < cut))

    # --- transforms --------------------------------------------------------
    def fft(self, f: np.ndarray) -> np.ndarray:
        return np.fft.rfftn(f, axes=AXES)

    def ifft(self, fh: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(fh, s=self.shape, axes=AXES)

    def deriv(self, f: np.ndarray, axis: int) -> np.ndarray:
        """∂_axis f with axis in {1, 2, 3}."""
        if axis not in (1, 2, 3):
            raise GridError(f"axis must be 1, 2 or 3, got {axis!r}")
        return self.ifft(self.ik[axis - 1] * self.fft(f))

    def gradient(self, f: np.ndarray, fh: np.ndarray | None = None) -> np.ndarray:
        """Stack (∂_1 f, ∂_2 f, ∂_3 f) on a new leading axis."""
        if fh is None:
            fh = self.fft(f)
        return self.ifft(np.stack([k * fh for k in self.ik]))

    def hessian(self, f: np.ndarray, fh: np.ndarray | None = None) -> np.ndarray:
        """∂_a∂_b f as repeated first derivatives, shape (3, 3, ...)."""
        if fh is None:
            fh = self.fft(f)
        ik = self.ik
        out = np.empty((3, 3) + fh.shape, dtype=complex)
        for a in range(3):
            for b in range(a, 3):
                out[a, b] = ik[a] * (ik[b] * fh)
                out[b, a] = out[a, b]
        return self.ifft(out)

    def dealias(self, f: np.ndarray) -> np.ndarray:
        return self.ifft(self.fft(f) * self.dealias_mask)

    # --- quadrature and norms ----------------------------------------------
    def integrate(self, f: np.ndarray) -> np.ndarray:
        """Trapezoidal (exact for trigonometric polynomials) integral over T³."""
        return np.sum(f, axis=AXES) * self.cell_volume

    def l2_sq(self, f: np.ndarray) -> float:
        """Squared L² norm summed over all leading component axes."""
        return float(np.sum(f * f) * self.cell_volume)

    def l2(self, f: np.ndarray) -> float:
        return math.sqrt(self.l2_sq(f))

    def max_sobolev_order(self) -> int:
        return self.n // 3

    def sobolev_sq(self, f: np.ndarray, N: int) -> float:
        """Σ_{|α|≤N} ‖∂_α f‖²_{L²}, each term computed in physical space."""
        if N < 0:
            raise GridError("Sobolev order must be non-negative")
        if N > self.max_sobolev_order():
            raise GridError(f"Sobolev order {N} too large for n={self.n} (max {self.max_sobolev_order()})")
        fh = self.fft(f)
        ik = self.ik
        total = 0.0
        for alpha in multi_indices(N):
            mult = 1.0
            for ax, p in enumerate(alpha):
                if p:
                    mult = mult * ik[ax] ** p
            df = f if not any(alpha) else self.ifft(mult * fh)
            total += self.l2_sq(df)
        return total

    def sobolev(self, f: np.ndarray, N: int) -> float:
        return math.sqrt(self.sobolev_sq(f, N))

    def _sobolev_weight(self, N: int, gradient: bool) -> np.ndarray:
        key = (N, gradient)
        cache = self.__dict__.setdefault("_weights", {})
        if key not in cache:
            k = [np.broadcast_to(ki * ki, (self.n, self.n, self.n // 2 + 1)) for ki in self._k]
            w = np.zeros((self.n, self.n, self.n // 2 + 1))
            for alpha in multi_indices(N):
                term = np.ones_like(w)
                for ax, p in enumerate(alpha):
                    if p:
                        term = term * k[ax] ** p
                w += term
            if gradient:
                w = w * (k[0] + k[1] + k[2])
            mult = np.full(self.n // 2 + 1, 2.0)
            mult[0] = 1.0
            mult[-1] = 1.0
            cache[key] = w * mult * (self.cell_volume / self.n ** 3)
        return cache[key]

    def sobolev_sq_modes(self, f: np.ndarray, N: int, gradient: bool = False,
                         fh: np.ndarray | None = None) -> np.ndarray:
        """Σ_{|α|≤N} ‖∂_α f‖²_{L²} per leading component, evaluated in mode space.

        With ``gradient`` the quantity is Σ_a Σ_{|α|≤N} ‖∂_α∂_a f‖²_{L²}.
        Agrees with :meth:`sobolev_sq` (same Nyquist convention) to rounding.
        """
        if N < 0 or N > self.max_sobolev_order():
            raise GridError(f"Sobolev order {N} outside [0, {self.max_sobolev_order()}] for n={self.n}")
        if fh is None:
            fh = self.fft(f)
        p = fh.real ** 2 + fh.imag ** 2
        return np.sum(p * self._sobolev_weight(N, gradient), axis=AXES)


def multi_indices(N: int) -> Iterator[tuple]:
    """All (α₁, α₂, α₃) with |α| ≤ N, ordered by total degree."""
    for total in range(N + 1):
        for a1 in range(total, -1, -1):
            for a2 in range(total - a1, -1, -1):
                yield (a1, a2, total - a1 - a2)


def count_multi_indices(N: int) -> int:
    return sum(1 for _ in multi_indices(N))


@dataclass(frozen=True)
class ScalarField:
    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            v = v.reshape(self.grid.shape)
        object.__setattr__(self, "values", v)

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


def spectral_derivative(f: ScalarField, axis: int) -> ScalarField:
    return ScalarField(f.grid, f.grid.deriv(f.values, axis))


def sobolev_norm(f: ScalarField, N: int) -> float:
    return f.grid.sobolev(f.values, N)


# --- snapshot format ---------------------------------------------------------
# Each record is a one-line JSON header {"n", "time", "name"} followed by n³
# little-endian float64 values in row-major (x¹, x², x³) order.  A file may
# hold any number of consecutive records.

def write_field(fh: BinaryIO, values: np.ndarray, time: float, name: str) -> None:
    values = np.asarray(values, dtype="<f8")
    n = values.shape[-1]
    if values.shape != (n, n, n):
        raise GridError(f"field {name!r} has shape {values.shape}, expected a cube")
    header = json.dumps({"n": int(n), "time": float(time), "name": str(name)})
    fh.write(header.encode("ascii") + b"\n")
    fh.write(np.ascontiguousarray(values).tobytes(order="C"))


def read_fields(fh: BinaryIO) -> list:
    """Read all records; returns a list of (header dict, array)."""
    out = []
    while True:
        line = fh.readline()
        if not line:
            break
        if not line.strip():
            continue
        header = json.loads(line.decode("ascii"))
        n = int(header["n"])
        raw = fh.read(8 * n ** 3)
        if len(raw) != 8 * n ** 3:
            raise GridError(f"truncated record {header.get('name')!r}")
        out.append((header, np.frombuffer(raw, dtype="<f8").reshape(n, n, n).astype(float)))
    return out


def save_fields(path, fields: dict, time: float) -> None:
    with open(path, "wb") as fh:
        for name, arr in fields.items():
            write_field(fh, arr, time, name)


def load_fields(path) -> tuple:
    """Return (time, {name: array}) from a snapshot file."""
    with open(path, "rb") as fh:
        recs = read_fields(fh)
    if not recs:
        raise GridError(f"{path}: no records")
    times = {r[0]["time"] for r in recs}
    if len(times) != 1:
        raise GridError(f"{path}: records disagree on the time stamp")
    return times.pop(), {h["name"]: a for h, a in recs}


def band_limit(n: int) -> int:
    """Largest wavenumber admitted for perturbations and norms on an n-grid."""
    return n // 3


def mode_profile(grid: PeriodicGrid, mode, profile: str = "cosine") -> np.ndarray:
    k = np.asarray(mode, dtype=float)
    phase = np.tensordot(k, grid.coords, axes=(0, 0))
    if profile == "cosine":
        return np.cos(phase)
    if profile == "sine":
        return np.sin(phase)
    raise GridError(f"unknown profile {profile!r}")


def iter_pairs():
    return itertools.combinations_with_replacement(range(3), 2)
