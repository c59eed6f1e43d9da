"""Van Genuchten water retention and unsaturated conductivity.

Retention (psi < 0, u = alpha*|psi|, m = 1 - 1/n):

    theta(psi) = (theta_s - theta_r) * (1 + u**n)**(-m) + theta_r

Conductivity (van Genuchten-Mualem):

    K(psi) = K_s * (1 - u**(n-1) * (1 + u**n)**(-m))**2 / (1 + u**n)**(m/2)

At and above saturation (psi >= 0) both curves are flat: theta = theta_s,
K = K_s, and both derivatives are zero.

The analytic derivatives below were derived by hand and checked against
symbolic differentiation; with A = 1 + u**n and B = u**(n-1) * A**(-m):

    dtheta/dpsi = (theta_s - theta_r) * alpha * m * n * u**(n-1) * A**(-m-1)
    dB/du       = (n-1) * u**(n-2) * A**(-m-1)        (uses m = 1 - 1/n)
    dK/dpsi     = alpha * K_s * [ 2*(1-B) * dB/du * A**(-m/2)
                                  + (1-B)**2 * (m*n/2) * u**(n-1) * A**(-m/2-1) ]

Both derivatives are nonnegative for psi < 0: wetter soil holds more water
and conducts better.

All functions are vectorized over psi and also accept autodiff Vars, in
which case the evaluation is recorded on the tape (the training loss needs
gradients through K, dK/dpsi and dtheta/dpsi).

Units: this package works in meters and hours throughout. The default soil
below is the classic sandy-soil set usually quoted as theta_r = 0.102,
theta_s = 0.368, alpha = 0.0335 1/cm, n = 2.0, K_s = 0.00922 cm/s; here it
is expressed as alpha = 3.35 1/m and K_s = 0.33192 m/h.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import as_value, where

__all__ = ["VanGenuchten", "DEFAULT_SOIL", "theta", "k", "dtheta_dpsi", "dk_dpsi"]


@dataclass(frozen=True)
class VanGenuchten:
    """Soil hydraulic parameter set. alpha in 1/m, k_s in m/h."""

    theta_r: float
    theta_s: float
    alpha: float
    n: float
    k_s: float

    def __post_init__(self):
        if not 0.0 <= self.theta_r < self.theta_s:
            raise ValueError(
                f"need 0 <= theta_r < theta_s, got {self.theta_r}, {self.theta_s}")
        if self.theta_s > 1.0:
            raise ValueError(f"theta_s must be <= 1, got {self.theta_s}")
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.n <= 1.0:
            raise ValueError(f"n must exceed 1, got {self.n}")
        if self.k_s <= 0.0:
            raise ValueError(f"k_s must be positive, got {self.k_s}")

    @property
    def m(self) -> float:
        return 1.0 - 1.0 / self.n


# sandy soil, m/h units (0.0335 1/cm, 0.00922 cm/s in cm-s units)
DEFAULT_SOIL = VanGenuchten(theta_r=0.102, theta_s=0.368, alpha=3.35, n=2.0,
                            k_s=0.33192)


def _split(psi):
    """Unsaturated mask plus a psi clamped to the wet side of zero.

    The clamp keeps the power-law expressions away from psi >= 0, where a
    negative base under a fractional exponent would produce NaNs that the
    branch select could not scrub out of gradients.
    """
    mask = np.asarray(as_value(psi)) < 0.0
    return mask, where(mask, psi, -1.0)


def theta(vg: VanGenuchten, psi):
    """Volumetric water content at pressure head psi (vectorized)."""
    mask, p = _split(psi)
    u = vg.alpha * (-p)
    se = (1.0 + u ** vg.n) ** (-vg.m)
    return where(mask, (vg.theta_s - vg.theta_r) * se + vg.theta_r, vg.theta_s)


def dtheta_dpsi(vg: VanGenuchten, psi):
    """Specific moisture capacity d(theta)/d(psi); zero for psi >= 0."""
    mask, p = _split(psi)
    u = vg.alpha * (-p)
    a = 1.0 + u ** vg.n
    c = (vg.theta_s - vg.theta_r) * vg.alpha * vg.m * vg.n
    return where(mask, c * u ** (vg.n - 1.0) * a ** (-vg.m - 1.0), 0.0)


def k(vg: VanGenuchten, psi):
    """Hydraulic conductivity at pressure head psi (vectorized)."""
    mask, p = _split(psi)
    u = vg.alpha * (-p)
    a = 1.0 + u ** vg.n
    b = u ** (vg.n - 1.0) * a ** (-vg.m)
    return where(mask, vg.k_s * (1.0 - b) ** 2.0 * a ** (-vg.m / 2.0), vg.k_s)


def dk_dpsi(vg: VanGenuchten, psi):
    """d(K)/d(psi) from the closed form in the module docstring; zero for
    psi >= 0."""
    mask, p = _split(psi)
    u = vg.alpha * (-p)
    a = 1.0 + u ** vg.n
    b = u ** (vg.n - 1.0) * a ** (-vg.m)
    db_du = (vg.n - 1.0) * u ** (vg.n - 2.0) * a ** (-vg.m - 1.0)
    one_b = 1.0 - b
    val = vg.alpha * vg.k_s * (
        2.0 * one_b * db_du * a ** (-vg.m / 2.0)
        + one_b ** 2.0 * (vg.m * vg.n / 2.0) * u ** (vg.n - 1.0)
        * a ** (-vg.m / 2.0 - 1.0))
    return where(mask, val, 0.0)
