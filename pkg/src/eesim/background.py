"""FLRW background family with a positive cosmological constant.

Every quantity here is a closed-form function of ``t``; nothing is tabulated.
The scale factor is evaluated through its logarithm so that late times do not
overflow the hyperbolic functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class CosmologyParams:
    """Parameters of the background: Λ, c_s², ρ̄ and å = a(0)."""

    lam: float = 3.0
    sound_speed_sq: float = 0.2
    rho_bar: float = 1.0
    a_ring: float = 1.0

    def __post_init__(self):
        if not (self.lam > 0):
            raise ValueError(f"cosmological constant must be positive, got {self.lam}")
        if not (0.0 < self.sound_speed_sq < 1.0):
            raise ValueError(f"sound speed squared must lie in (0, 1), got {self.sound_speed_sq}")
        if not (self.rho_bar > 0):
            raise ValueError(f"rho_bar must be positive, got {self.rho_bar}")
        if not (self.a_ring > 0):
            raise ValueError(f"a_ring must be positive, got {self.a_ring}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DerivedConstants:
    lam: float
    H: float
    s: float
    w: float
    P: float
    kappa_ring: float
    psi_bar: float
    q: float
    a_ring: float
    sound_speed_sq: float

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def subcritical(self) -> bool:
        return self.sound_speed_sq < 1.0 / 3.0


# Lower clamp applied to the default decay exponent when min{w, 1-w} <= 0.
Q_FLOOR = 1e-3


def default_q(w: float) -> float:
    """Decay exponent (2/3)·min{w, 1-w}, clamped to stay positive."""
    q = (2.0 / 3.0) * min(w, 1.0 - w)
    return max(q, Q_FLOOR)


def derive_constants(params: CosmologyParams, q_override: Optional[float] = None) -> DerivedConstants:
    cs2 = params.sound_speed_sq
    if not (0.0 < cs2 < 1.0):
        raise ValueError(f"sound speed squared must lie in (0, 1), got {cs2}")
    if q_override is not None and not (q_override > 0):
        raise ValueError(f"q_override must be positive, got {q_override}")
    H = math.sqrt(params.lam / 3.0)
    s = (1.0 - cs2) / (2.0 * cs2)
    w = 3.0 * cs2
    P = 3.0 * (1.0 + cs2)
    kappa = params.rho_bar * params.a_ring ** P
    psi_bar = (params.rho_bar * (s + 1.0) / (2.0 * s + 1.0)) ** (1.0 / (2.0 * s + 2.0)) * params.a_ring ** w
    q = default_q(w) if q_override is None else float(q_override)
    return DerivedConstants(lam=params.lam, H=H, s=s, w=w, P=P, kappa_ring=kappa,
                            psi_bar=psi_bar, q=q, a_ring=params.a_ring, sound_speed_sq=cs2)


def log_scale_factor(dc: DerivedConstants, t):
    """Ω(t) = ln a(t) from the closed form, written to be overflow free.

    With x = PHt/2, B = √(κ̊/(3H²) + å^P) and C = å^{P/2}, the closed form
    is a^{P/2} = B sinh x + C cosh x = ½eˣ[(B + C) + (C − B)e^{−2x}].
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("the background is only evaluated for t >= 0")
    P, H = dc.P, dc.H
    B = math.sqrt(dc.kappa_ring / (3.0 * H * H) + dc.a_ring ** P)
    C = dc.a_ring ** (P / 2.0)
    x = 0.5 * P * H * t
    inner = 0.5 * ((B + C) + (C - B) * np.exp(-2.0 * x))
    Om = (2.0 / P) * (x + np.log(inner))
    return Om if Om.ndim else float(Om)


def hubble_from_omega_log(dc: DerivedConstants, Om):
    """ω = √(H² + κ̊/(3a^P)) expressed through Ω."""
    return np.sqrt(dc.H ** 2 + dc.kappa_ring / 3.0 * np.exp(-dc.P * np.asarray(Om)))


def scale_factor(dc: DerivedConstants, t):
    """Return (a, Ω, ȧ) at time ``t``."""
    Om = log_scale_factor(dc, t)
    a = np.exp(Om)
    da = a * hubble_from_omega_log(dc, Om)
    if np.ndim(a) == 0:
        return float(a), float(Om), float(da)
    return a, Om, da


def hubble(dc: DerivedConstants, t):
    """Expansion rate ω = ȧ/a."""
    om = hubble_from_omega_log(dc, log_scale_factor(dc, t))
    return float(om) if np.ndim(om) == 0 else om


def hubble_dot(dc: DerivedConstants, t):
    """ω̇ = −(P/2)(ω² − H²), which equals −σ̃^{s+1} on the background."""
    om = hubble(dc, t)
    return -0.5 * dc.P * (om * om - dc.H ** 2)


def background_fluid(dc: DerivedConstants, t):
    """(∂_tΦ̃, σ̃) = (Ψ̄e^{−wΩ}, (∂_tΦ̃)²)."""
    Om = log_scale_factor(dc, t)
    phi_t = dc.psi_bar * np.exp(-dc.w * np.asarray(Om))
    if np.ndim(phi_t) == 0:
        phi_t = float(phi_t)
    return phi_t, phi_t * phi_t


def asymptotic_constant(dc: DerivedConstants) -> float:
    """A with e^{−Ht}a(t) → A."""
    P, H = dc.P, dc.H
    B = math.sqrt(dc.kappa_ring / (3.0 * H * H) + dc.a_ring ** P)
    C = dc.a_ring ** (P / 2.0)
    return (0.5 * (B + C)) ** (2.0 / P)


@dataclass(frozen=True)
class BackgroundPoint:
    """Everything the right-hand side needs from the background at one time."""

    t: float
    Omega: float
    omega: float
    omega_dot: float
    H: float
    lam: float
    s: float
    w: float
    phi_t: float
    sigma: float

    @property
    def e2(self) -> float:
        return math.exp(2.0 * self.Omega)


def background_at(dc: DerivedConstants, t: float) -> BackgroundPoint:
    Om = log_scale_factor(dc, t)
    om = float(hubble_from_omega_log(dc, Om))
    omd = -0.5 * dc.P * (om * om - dc.H ** 2)
    phi_t = dc.psi_bar * math.exp(-dc.w * Om)
    return BackgroundPoint(t=float(t), Omega=Om, omega=om, omega_dot=omd, H=dc.H, lam=dc.lam,
                           s=dc.s, w=dc.w, phi_t=phi_t, sigma=phi_t * phi_t)
