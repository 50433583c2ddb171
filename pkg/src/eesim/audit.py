"""Randomised cross-checks of the decomposed right-hand side against the direct one."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .background import BackgroundPoint, DerivedConstants, background_at
from .rhs import LocalData, full_rhs_decomposed, full_rhs_direct
from .tensors import MetricJet

BLOCKS = ("g00", "g0j", "hjk", "phi")


def _sym(x):
    return 0.5 * (x + np.swapaxes(x, 0, 1))


def random_local_data(rng: np.random.Generator, size: int, bg: BackgroundPoint, q: float,
                      eta: float = 0.05) -> LocalData:
    """Random pointwise data in the small-perturbation regime around the background.

    Sizes follow the bootstrap shape: |g_00 + 1| ≲ η, e^{−2Ω}g_jk within η of
    the identity, |g_0j| ≲ η e^{(1−q)Ω}, and |z| ≲ η.
    """
    S = (size,)
    Om = bg.Omega
    u = lambda *sh: rng.uniform(-1.0, 1.0, sh + S)
    g0_scale = eta * math.exp((1.0 - q) * Om) * math.exp(-Om)   # keeps g^{0a} small as well
    h = np.eye(3)[:, :, None] + eta * _sym(u(3, 3))
    jet = MetricJet(
        g00=-1.0 + eta * u(), g0=g0_scale * u(3), h=h,
        dt_g00=eta * u(), dt_g0=g0_scale * u(3), dt_h=eta * _sym(u(3, 3)),
        grad_g00=eta * u(3), grad_g0=g0_scale * u(3, 3), grad_h=eta * _sym_last(u(3, 3, 3)),
        Omega=Om, omega=bg.omega)
    phi_t = bg.phi_t * (1.0 + eta * u())
    phi = eta * math.exp(Om) * phi_t * u(3)
    dd = lambda *lead: _sym(u(3, 3, *lead))
    return LocalData(
        jet=jet, dd_g00=eta * dd(), dd_g0=g0_scale * dd(3), dd_h=eta * _sym_last(dd(3, 3)),
        grad_dt_g00=eta * u(3), grad_dt_g0=g0_scale * u(3, 3), grad_dt_h=eta * _sym_last(u(3, 3, 3)),
        phi_t=phi_t, phi=phi, grad_phi_t=eta * bg.phi_t * u(3),
        grad_phi=eta * math.exp(Om) * bg.phi_t * _sym(u(3, 3)))


def _sym_last(x):
    """Symmetrise the two component axes that follow the derivative axes."""
    if x.ndim == 4:      # (a, j, k, S)
        return 0.5 * (x + np.swapaxes(x, 1, 2))
    return 0.5 * (x + np.swapaxes(x, 2, 3))     # (a, b, j, k, S)


def relative_deviation(a: np.ndarray, b: np.ndarray) -> float:
    """Largest per-component sup-norm relative deviation over a batch.

    Each component (leading axes) is compared across the sample axis as
    max|a − b| / max(max|a|, max|b|); the worst component is returned.
    """
    diff = np.abs(a - b).max(axis=-1)
    scale = np.maximum(np.abs(a).max(axis=-1), np.abs(b).max(axis=-1))
    return float((diff / np.where(scale > 0, scale, 1.0)).max())


def componentwise_deviation(a: np.ndarray, b: np.ndarray, axes_lead: int) -> np.ndarray:
    """Pointwise |a − b| / max(|a|, |b|), maximised over component axes."""
    diff = np.abs(a - b)
    scale = np.maximum(np.abs(a), np.abs(b))
    r = diff / np.where(scale > 0, scale, 1.0)
    if axes_lead:
        r = r.reshape((-1,) + r.shape[axes_lead:]).max(axis=0)
    return r


@dataclass
class AuditReport:
    seed: int
    trials: int
    max_rel: dict = field(default_factory=dict)
    max_abs: dict = field(default_factory=dict)
    max_componentwise: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_dict(self):
        return {"seed": self.seed, "trials": self.trials, "max_relative_deviation": self.max_rel,
                "max_absolute_deviation": self.max_abs,
                "max_componentwise_relative_deviation": self.max_componentwise,
                "seconds": self.seconds}

    def worst(self) -> float:
        return max(self.max_rel.values()) if self.max_rel else 0.0


def identity_audit(dc: DerivedConstants, seed: int = 0, trials: int = 10_000, eta: float = 0.05,
                   t_max: float | None = None, batch: int = 2500) -> AuditReport:
    """Compare the decomposed and direct paths on ``trials`` random points.

    Points are drawn in batches, each batch at its own random time in
    [0, t_max]; the report keeps the maximum relative deviation per block.
    """
    report = AuditReport(seed=seed, trials=trials)
    if trials <= 0:
        return report
    rng = np.random.default_rng(seed)
    t_max = 3.0 / dc.H if t_max is None else t_max
    start = time.perf_counter()
    rel = {b: 0.0 for b in BLOCKS}
    ab = {b: 0.0 for b in BLOCKS}
    comp = {b: 0.0 for b in BLOCKS}
    done = 0
    while done < trials:
        size = min(batch, trials - done)
        t = float(rng.uniform(0.0, t_max))
        bg = background_at(dc, t)
        ld = random_local_data(rng, size, bg, dc.q, eta)
        dec = full_rhs_decomposed(ld, bg)
        dirc = full_rhs_direct(ld, bg)
        for name, a, b, lead in zip(BLOCKS, dec, dirc, (0, 1, 2, 0)):
            rel[name] = max(rel[name], relative_deviation(a, b))
            ab[name] = max(ab[name], float(np.abs(a - b).max()))
            comp[name] = max(comp[name], float(componentwise_deviation(a, b, lead).max()))
        done += size
    report.max_rel = rel
    report.max_abs = ab
    report.max_componentwise = comp
    report.seconds = time.perf_counter() - start
    return report
