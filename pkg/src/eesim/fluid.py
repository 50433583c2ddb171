"""Pointwise fluid quantities: σ, the ratio z_j and the reciprocal acoustical metric."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensors import DegenerateMetricError, InverseMetricPoint

# Smallest |∂_tΦ| for which z_j is formed.
PHI_T_FLOOR = 1e-300
# Relative tolerance on the acoustical denominator (1 + 2s) + Δ_(m).
DENOM_TOL = 1e-8


def enthalpy_sq(inv: InverseMetricPoint, phi_t, phi, check: bool = True):
    """σ = −g^{αβ}∂_αΦ ∂_βΦ."""
    sigma = -(inv.gu00 * phi_t * phi_t
              + 2.0 * phi_t * np.einsum("a...,a...->...", inv.gu0, phi)
              + np.einsum("ab...,a...,b...->...", inv.gus, phi, phi))
    if check:
        bad = ~(sigma > 0)
        if np.any(bad):
            raise DegenerateMetricError(3, "sigma <= 0: fluid degeneracy", int(np.count_nonzero(bad)))
    return sigma


def sigma_power(sigma, p):
    """σ^p as exp(p ln σ) for σ > 0."""
    return np.exp(p * np.log(sigma))


def velocity_ratio(phi_t, phi, Omega: float):
    """z_j = e^{−Ω} ∂_jΦ / ∂_tΦ."""
    phi_t = np.asarray(phi_t, dtype=float)
    bad = ~(np.abs(phi_t) >= PHI_T_FLOOR)
    if np.any(bad):
        raise DegenerateMetricError(3, "partial_t Phi vanishes", int(np.count_nonzero(bad)))
    return np.exp(-Omega) * np.asarray(phi) / phi_t


@dataclass
class AcousticalPoint:
    m00: float
    m0: np.ndarray
    ms: np.ndarray
    delta_m: np.ndarray
    delta_m_jk: np.ndarray
    denom: np.ndarray


def acoustical_metric(inv: InverseMetricPoint, phi_t, phi, s: float, Omega: float,
                      check: bool = True) -> AcousticalPoint:
    G00, G0, G = inv.gu00, inv.gu0, inv.gus
    z = velocity_ratio(phi_t, phi, Omega)
    eO = np.exp(Omega)
    e2O = eO * eO
    one2s = 1.0 + 2.0 * s
    G0z = np.einsum("a...,a...->...", G0, z)
    Gz = np.einsum("ab...,b...->a...", G, z)          # g^{ab} z_b
    zGz = np.einsum("a...,a...->...", z, Gz)

    delta_m = (one2s * (G00 + 1.0) * (G00 - 1.0)
               + 2.0 * one2s * eO * G00 * G0z
               + e2O * (G00 * zGz + 2.0 * s * G0z * G0z))
    # The linear-in-z term 2e^Ω·2s g^{0k}g^{aj}z_a is only meaningful
    # through its symmetric part, since it multiplies ∂_j∂_kΦ.
    G0G0 = np.einsum("j...,k...->jk...", G0, G0)
    GzG0 = np.einsum("j...,k...->jk...", Gz, G0)
    delta_m_jk = ((G00 + 1.0) * G + 2.0 * s * G0G0
                  + 2.0 * eO * (G * G0z + s * (GzG0 + np.swapaxes(GzG0, 0, 1)))
                  + e2O * (G * zGz + 2.0 * s * np.einsum("j...,k...->jk...", Gz, Gz)))
    denom = one2s + delta_m
    if check:
        bad = ~(denom > DENOM_TOL * one2s)
        if np.any(bad):
            raise DegenerateMetricError(3, "acoustical denominator (1+2s)+Delta_m vanishes",
                                        int(np.count_nonzero(bad)))
    ms = (G - delta_m_jk) / denom
    m0 = -(G00 * G0 * one2s
           + 2.0 * eO * ((s + 1.0) * G0 * G0z + s * G00 * Gz)
           + e2O * (G0 * zGz + 2.0 * s * Gz * G0z)) / denom
    return AcousticalPoint(m00=-1.0, m0=m0, ms=ms, delta_m=delta_m, delta_m_jk=delta_m_jk, denom=denom)


def raised_gradient(ginv_full: np.ndarray, phi_t, phi):
    """Return (σ, ∂^μΦ) computed from the full 4×4 inverse metric."""
    dphi = np.concatenate([np.asarray(phi_t)[None], np.asarray(phi)])
    up = np.einsum("mn...,n...->m...", ginv_full, dphi)
    sigma = -np.einsum("m...,m...->...", up, dphi)
    return sigma, up


def check_acoustical_definite(ms: np.ndarray) -> None:
    """Class-3 breakdown if m^{jk} stops being positive definite."""
    a, b, c = ms[0, 0], ms[0, 1], ms[0, 2]
    d, e, f = ms[1, 1], ms[1, 2], ms[2, 2]
    det = a * (d * f - e * e) - b * (b * f - c * e) + c * (b * e - c * d)
    bad = ~((a > 0) & (a * d - b * b > 0) & (det > 0))
    if np.any(bad):
        raise DegenerateMetricError(3, "acoustical metric m^jk is not positive definite",
                                    int(np.count_nonzero(bad)))
