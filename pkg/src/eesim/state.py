"""Evolution state: the first-order-in-time unknowns packed into one array.

Layout along the leading axis of ``y`` (24 fields):

    0      g_00          1      ∂_t g_00
    2:5    g_0j          5:8    ∂_t g_0j
    8:14   h_jk (unique) 14:20  ∂_t h_jk (unique)
    20     Φ_t           21:24  Φ_j

with the symmetric pairs ordered 11, 12, 13, 22, 23, 33.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import PeriodicGrid

NFIELDS = 24
G00, DG00 = 0, 1
G0 = slice(2, 5)
DG0 = slice(5, 8)
H = slice(8, 14)
DH = slice(14, 20)
PHI_T = 20
PHI = slice(21, 24)

PAIRS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
FULL = np.array([[0, 1, 2], [1, 3, 4], [2, 4, 5]])

FIELD_NAMES = (["g00", "dt_g00"] + [f"g0{j}" for j in (1, 2, 3)] + [f"dt_g0{j}" for j in (1, 2, 3)]
               + [f"h{j + 1}{k + 1}" for j, k in PAIRS] + [f"dt_h{j + 1}{k + 1}" for j, k in PAIRS]
               + ["phi_t"] + [f"phi_{j}" for j in (1, 2, 3)])


def sym_full(u: np.ndarray) -> np.ndarray:
    """Expand 6 unique components (leading axis) into a full 3×3 array."""
    return u[FULL]


def sym_unique(full: np.ndarray) -> np.ndarray:
    return np.stack([full[j, k] for j, k in PAIRS])


@dataclass
class EvolutionState:
    grid: PeriodicGrid
    y: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        expected = (NFIELDS,) + self.grid.shape
        if self.y.shape != expected:
            raise ValueError(f"state array has shape {self.y.shape}, expected {expected}")

    @classmethod
    def from_fields(cls, grid: PeriodicGrid, t: float, g00, dt_g00, g0, dt_g0, h, dt_h, phi_t, phi):
        """Build from full fields (h and ∂_t h as 3×3 arrays); scalars broadcast."""
        y = np.empty((NFIELDS,) + grid.shape)
        y[G00] = g00
        y[DG00] = dt_g00
        y[G0] = _vec(g0, grid)
        y[DG0] = _vec(dt_g0, grid)
        y[H] = sym_unique(_mat(h, grid))
        y[DH] = sym_unique(_mat(dt_h, grid))
        y[PHI_T] = phi_t
        y[PHI] = _vec(phi, grid)
        return cls(grid, y, float(t))

    def copy(self) -> "EvolutionState":
        return EvolutionState(self.grid, self.y.copy(), self.t)

    @property
    def g00(self):
        return self.y[G00]

    @property
    def dt_g00(self):
        return self.y[DG00]

    @property
    def g0(self):
        return self.y[G0]

    @property
    def dt_g0(self):
        return self.y[DG0]

    @property
    def h(self):
        return sym_full(self.y[H])

    @property
    def dt_h(self):
        return sym_full(self.y[DH])

    @property
    def phi_t(self):
        return self.y[PHI_T]

    @property
    def phi(self):
        return self.y[PHI]

    def named_fields(self) -> dict:
        return {name: self.y[i] for i, name in enumerate(FIELD_NAMES)}


def _vec(v, grid):
    v = np.asarray(v, dtype=float)
    if v.shape == (3,):
        return np.broadcast_to(v[:, None, None, None], (3,) + grid.shape)
    return v


def _mat(m, grid):
    m = np.asarray(m, dtype=float)
    if m.shape == (3, 3):
        return np.broadcast_to(m[:, :, None, None, None], (3, 3) + grid.shape)
    return m
