"""Pointwise 3+1 metric algebra.

All routines are vectorised: component indices come first and any number of
trailing sample axes (grid points, random trial points) follow.  Index 0 is
time; spatial indices run 1..3 in the physics but 0..2 in arrays whose
leading axis has length 3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateMetricError(ArithmeticError):
    """Raised when a continuation criterion fails at some sample point.

    ``breakdown_class`` follows the four ways a solution can stop:
    1 = g_00 (or g^00) degenerates, 2 = the spatial metric degenerates,
    3 = the acoustical metric degenerates, 4 = blow-up or non-finite data.
    """

    def __init__(self, breakdown_class: int, message: str, count: int = 0):
        super().__init__(message)
        self.breakdown_class = int(breakdown_class)
        self.count = int(count)


@dataclass
class MetricPoint:
    g00: np.ndarray
    g0: np.ndarray  # (3, ...)
    gs: np.ndarray  # (3, 3, ...)

    def full(self) -> np.ndarray:
        return assemble(self.g00, self.g0, self.gs)


@dataclass
class InverseMetricPoint:
    gu00: np.ndarray
    gu0: np.ndarray
    gus: np.ndarray

    def full(self) -> np.ndarray:
        return assemble(self.gu00, self.gu0, self.gus)


def assemble(c00, c0, cs) -> np.ndarray:
    """Pack (00, 0j, jk) blocks into a (4, 4, ...) array."""
    c00 = np.asarray(c00, dtype=float)
    out = np.empty((4, 4) + c00.shape)
    out[0, 0] = c00
    out[0, 1:] = c0
    out[1:, 0] = c0
    out[1:, 1:] = cs
    return out


def spatial_inverse(gs: np.ndarray, check: bool = True):
    """Adjugate inverse of a symmetric 3×3 field; returns (inverse, det).

    With ``check`` the leading principal minors are tested (Sylvester's
    criterion) and a class-2 breakdown is raised if any point fails.
    """
    a, b, c = gs[0, 0], gs[0, 1], gs[0, 2]
    d, e = gs[1, 1], gs[1, 2]
    f = gs[2, 2]
    A = d * f - e * e
    B = c * e - b * f
    C = b * e - c * d
    det = a * A + b * B + c * C
    if check:
        bad = ~((a > 0) & (a * d - b * b > 0) & (det > 0))
        if np.any(bad):
            raise DegenerateMetricError(2, "spatial metric is not positive definite", int(np.count_nonzero(bad)))
    inv = np.empty_like(gs)
    inv[0, 0] = A
    inv[0, 1] = inv[1, 0] = B
    inv[0, 2] = inv[2, 0] = C
    inv[1, 1] = a * f - c * c
    inv[1, 2] = inv[2, 1] = b * c - a * e
    inv[2, 2] = a * d - b * b
    inv /= det
    return inv, det


def invert_metric(m: MetricPoint, check: bool = True) -> InverseMetricPoint:
    """Block inverse through the Schur complement g00 − d², d² = (g_♭⁻¹)^{ab}g_0a g_0b."""
    ginv_s, _ = spatial_inverse(m.gs, check=check)
    v = np.einsum("ab...,b...->a...", ginv_s, m.g0)
    d2 = np.einsum("a...,a...->...", v, m.g0)
    schur = m.g00 - d2
    if check:
        bad = ~(schur < 0)
        if np.any(bad):
            raise DegenerateMetricError(1, "g_00 - d^2 is not negative (Lorentzian signature lost)",
                                        int(np.count_nonzero(bad)))
    gu00 = 1.0 / schur
    gu0 = -v * gu00
    gus = ginv_s + np.einsum("a...,b...->ab...", v, v) * gu00
    return InverseMetricPoint(gu00=gu00, gu0=gu0, gus=gus)


def christoffel_lowered(dg: np.ndarray) -> np.ndarray:
    """Γ_{μαν} = ½(∂_μ g_{αν} + ∂_ν g_{μα} − ∂_α g_{μν}) from dg[μ, α, ν] = ∂_μ g_{αν}."""
    t1 = np.einsum("nma...->man...", dg)
    t2 = np.einsum("amn...->man...", dg)
    return 0.5 * (dg + t1 - t2)


def raise_middle(ginv: np.ndarray, gam: np.ndarray) -> np.ndarray:
    """Γ_μ^α_ν = g^{αλ}Γ_{μλν}."""
    return np.einsum("al...,mln...->man...", ginv, gam)


def contracted_christoffel(ginv: np.ndarray, gam: np.ndarray, g: np.ndarray):
    """Return (Γ^μ, Γ_μ) with Γ^μ = g^{αβ}g^{μκ}Γ_{ακβ} and Γ_μ = g_{μα}Γ^α."""
    low = np.einsum("ab...,akb...->k...", ginv, gam)
    up = np.einsum("mk...,k...->m...", ginv, low)
    down = np.einsum("ma...,a...->m...", g, up)
    return up, down


def gauge_residual(g: np.ndarray, ginv: np.ndarray, gam: np.ndarray, omega: float):
    """Q^μ = 3ωδ^μ_0 − Γ^μ and Q_μ = 3ωg_{0μ} − Γ_μ."""
    up, down = contracted_christoffel(ginv, gam, g)
    qup = -up
    qup[0] = qup[0] + 3.0 * omega
    qdown = 3.0 * omega * g[0] - down
    return qup, qdown


def raised_christoffel_direct(ginv: np.ndarray, gam: np.ndarray) -> np.ndarray:
    """Γ^{μαν} = g^{μκ}g^{αλ}g^{νσ}Γ_{κλσ}."""
    t = np.einsum("ns...,kls...->kln...", ginv, gam)
    t = np.einsum("al...,kln...->kan...", ginv, t)
    return np.einsum("mk...,kan...->man...", ginv, t)


@dataclass
class MetricJet:
    """First-order metric data at a set of points, in the rescaled h-variables.

    ``grad_*`` arrays carry the derivative index first: grad_g0[a, j] = ∂_a g_0j
    and grad_h[a, j, k] = ∂_a h_jk.
    """

    g00: np.ndarray
    g0: np.ndarray
    h: np.ndarray
    dt_g00: np.ndarray
    dt_g0: np.ndarray
    dt_h: np.ndarray
    grad_g00: np.ndarray
    grad_g0: np.ndarray
    grad_h: np.ndarray
    Omega: float
    omega: float

    @property
    def e2(self) -> float:
        return float(np.exp(2.0 * self.Omega))

    def metric(self) -> MetricPoint:
        return MetricPoint(self.g00, self.g0, self.e2 * self.h)

    def spatial_derivs(self):
        """(∂_t g_ab, ∂_c g_ab) for the unrescaled spatial metric."""
        e2 = self.e2
        dt_gs = e2 * (self.dt_h + 2.0 * self.omega * self.h)
        return dt_gs, e2 * self.grad_h

    def dg(self) -> np.ndarray:
        """dg[μ, α, ν] = ∂_μ g_{αν}."""
        dt_gs, grad_gs = self.spatial_derivs()
        shape = (4, 4, 4) + np.shape(self.g00)
        dg = np.empty(shape)
        dg[0] = assemble(self.dt_g00, self.dt_g0, dt_gs)
        for a in range(3):
            dg[a + 1] = assemble(self.grad_g00[a], self.grad_g0[a], grad_gs[a])
        return dg


_PATHS: dict = {}


def _e(spec, *ops):
    """einsum with the contraction order cached per (spec, operand shapes)."""
    if max(np.size(o) for o in ops) <= 512:
        return np.einsum(spec, *ops)
    key = (spec,) + tuple(np.shape(o) for o in ops)
    path = _PATHS.get(key)
    if path is None:
        if len(_PATHS) > 4096:
            _PATHS.clear()
        path = _PATHS[key] = np.einsum_path(spec, *ops, optimize="greedy")[0]
    return np.einsum(spec, *ops, optimize=path)


def principal_raised_christoffel(inv: InverseMetricPoint, omega: float) -> np.ndarray:
    G = inv.gus
    out = np.zeros((4, 4, 4) + G.shape[2:])
    out[0, 1:, 1:] = -omega * G
    out[1:, 1:, 0] = -omega * G  # Γ^{kj0} = Γ^{0jk}
    out[1:, 0, 1:] = omega * G
    return out


def delta_gamma(jet: MetricJet, inv: InverseMetricPoint) -> np.ndarray:
    """Error terms Δ_(Γ)^{μαν} of the raised Christoffel decomposition."""
    G00, G0, G = inv.gu00, inv.gu0, inv.gus
    om, e2 = jet.omega, jet.e2
    dtg00, dtg0 = jet.dt_g00, jet.dt_g0
    dg00, dg0 = jet.grad_g00, jet.grad_g0
    dtgs, dgs = jet.spatial_derivs()
    g0 = jet.g0
    D = np.zeros((4, 4, 4) + np.shape(G00))

    d000 = (0.5 * G00 ** 3 * dtg00
            + 0.5 * G00 * _e("a...,b...,ab...->...", G0, G0, dtgs + 2.0 * dg0)
            + 0.5 * G00 ** 2 * _e("a...,a...->...", G0, 2.0 * dtg0 + dg00)
            + 0.5 * _e("a...,b...,l...,abl...->...", G0, G0, G0, dgs))
    D[0, 0, 0] = d000

    dj00 = (0.5 * G00 ** 2 * (G0 * dtg00 + _e("aj...,a...->j...", G, dg00))
            + G00 * G0 * _e("a...,a...->...", G0, dtg0)
            + G00 * _e("aj...,b...,ab...->j...", G, G0, dg0)
            + 0.5 * _e("aj...,b...,l...,abl...->j...", G, G0, G0, dgs)
            + 0.5 * G0 * _e("a...,b...,ab...->...", G0, G0, dtgs))
    D[1:, 0, 0] = dj00
    D[0, 0, 1:] = dj00

    d0j0 = (0.5 * G00 ** 2 * (G0 * dtg00 + 2.0 * _e("aj...,a...->j...", G, dtg0) - _e("aj...,a...->j...", G, dg00))
            + G00 * (_e("aj...,b...,ab...->j...", G, G0, dtgs)
                     + G0 * _e("a...,a...->...", G0, dg00)
                     + _e("a...,bj...,ab...->j...", G0, G, dg0)
                     - _e("aj...,b...,ab...->j...", G, G0, dg0))
            + _e("a...,bj...,l...,abl...->j...", G0, G, G0, dgs)
            - 0.5 * _e("a...,bj...,l...,bal...->j...", G0, G, G0, dgs)
            - 0.5 * G0 * _e("a...,b...,ab...->...", G0, G0, dtgs - 2.0 * dg0))
    D[0, 1:, 0] = d0j0

    U = (e2 * _e("bk...,aj...,ab...->jk...", G, G, jet.dt_h)
         - 2.0 * om * _e("bk...,j...,b...->jk...", G, G0, g0))
    GG0 = _e("j...,k...->jk...", G0, G0)

    sym_dg0 = dg0 + np.swapaxes(dg0, 0, 1)        # ∂_a g_0b + ∂_b g_0a, index [a, b]
    anti_dg0 = dg0 - np.swapaxes(dg0, 0, 1)       # ∂_a g_0b − ∂_b g_0a

    d0jk = (0.5 * G00 * (GG0 * dtg00
                         + _e("j...,ak...,a...->jk...", G0, G, dg00)
                         + _e("aj...,k...,a...->jk...", G, G0, 2.0 * dtg0 - dg00)
                         - _e("aj...,kb...,ab...->jk...", G, G, anti_dg0))
            + 0.5 * (_e("a...,j...,k...,a...->jk...", G0, G0, G0, dg00)
                     + _e("a...,j...,bk...,ab...->jk...", G0, G0, G, sym_dg0 - dtgs)
                     + _e("a...,bj...,k...,ab...->jk...", G0, G, G0, dtgs + anti_dg0)
                     + _e("a...,bj...,lk...,abl...->jk...", G0, G, G,
                          dgs + _cyc_l_a_b(dgs) - np.swapaxes(dgs, 0, 1)))
            + 0.5 * G00 * U + om * (G00 + 1.0) * G)
    D[0, 1:, 1:] = d0jk
    D[1:, 1:, 0] = np.swapaxes(d0jk, 0, 1)  # Γ^{kj0} = Γ^{0jk}: element [k, j, 0] = Δ^{0jk}

    dj0k = (0.5 * G00 * (GG0 * dtg00
                         + _e("j...,ak...,a...->jk...", G0, G, dg00)
                         + _e("aj...,k...,a...->jk...", G, G0, dg00)
                         + _e("aj...,bk...,ab...->jk...", G, G, sym_dg0))
            + 0.5 * (_e("a...,j...,k...,a...->jk...", G0, G0, G0, 2.0 * dtg0 - dg00)
                     + _e("a...,j...,bk...,ab...->jk...", G0, G0, G, dtgs - anti_dg0)
                     + _e("a...,bj...,k...,ab...->jk...", G0, G, G0, dtgs - anti_dg0)
                     + _e("a...,bj...,lk...,abl...->jk...", G0, G, G,
                          np.swapaxes(dgs, 0, 1) + _cyc_l_a_b(dgs) - dgs))
            - 0.5 * G00 * U - om * (G00 + 1.0) * G)
    D[1:, 0, 1:] = dj0k

    dijk = (0.5 * _e("i...,j...,k...->ijk...", G0, G0, G0) * dtg00
            + 0.5 * (_e("ai...,j...,k...,a...->ijk...", G, G0, G0, dg00)
                     + _e("i...,j...,ak...,a...->ijk...", G0, G0, G, dg00)
                     - _e("i...,aj...,k...,a...->ijk...", G0, G, G0, dg00))
            + _e("i...,aj...,k...,a...->ijk...", G0, G, G0, dtg0)
            + 0.5 * (_e("ai...,bj...,k...,ab...->ijk...", G, G, G0, dg0)
                     + _e("ai...,j...,bk...,ab...->ijk...", G, G0, G, dg0)
                     + _e("bi...,j...,ak...,ab...->ijk...", G, G0, G, dg0)
                     + _e("i...,bj...,ak...,ab...->ijk...", G0, G, G, dg0)
                     - _e("bi...,aj...,k...,ab...->ijk...", G, G, G0, dg0)
                     - _e("i...,aj...,bk...,ab...->ijk...", G0, G, G, dg0))
            + 0.5 * (_e("i...,aj...,bk...,ab...->ijk...", G0, G, G, dtgs)
                     + _e("ai...,bj...,k...,ab...->ijk...", G, G, G0, dtgs)
                     - _e("ai...,j...,bk...,ab...->ijk...", G, G0, G, dtgs))
            + 0.5 * (_e("ai...,bj...,lk...,abl...->ijk...", G, G, G, dgs)
                     + _e("bi...,lj...,ak...,abl...->ijk...", G, G, G, dgs)
                     - _e("bi...,aj...,lk...,abl...->ijk...", G, G, G, dgs)))
    D[1:, 1:, 1:] = dijk
    return D


def _cyc_l_a_b(dgs: np.ndarray) -> np.ndarray:
    """Rearrange so that out[a, b, l] = ∂_l g_{ab}."""
    return np.einsum("lab...->abl...", dgs)


def raised_christoffel_decomposed(jet: MetricJet, inv: InverseMetricPoint):
    """Return (principal, Δ_(Γ)) with Γ^{μαν} = principal + Δ."""
    return principal_raised_christoffel(inv, jet.omega), delta_gamma(jet, inv)
