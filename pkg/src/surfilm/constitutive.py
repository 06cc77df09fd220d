"""Scalar constitutive functions of the surfactant thin-film model.

Surface tension models, the mobilities of the regularized system, the
interpolation between a height and its smoothed counterpart, and the
potentials and entropy that make up the energy. Every function accepts
scalars or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import xlogy

#: mobility ratio constant, fixed by the dissipation budget
ETA = 0.75
DEFAULT_ETA1 = 0.875


class DomainError(ValueError):
    """A concentration left the range on which the surface tension model is valid."""


@dataclass(frozen=True)
class SigmaModel:
    """Equation of state sigma(Gamma).

    ``linear``: sigma_s - beta r.
    ``logarithmic``: sigma_s - sign beta ln(1 + sign r / gamma_inf), valid on
    [0, gamma_max], so that sigma' = -beta / (gamma_inf + sign r) < 0 for
    both signs (sign = -1 is the Langmuir form sigma_s + beta ln(1 - r/gamma_inf)).
    With sign = +1 the slope decays like 1/r, so a finite ``gamma_max`` is
    needed to keep -sigma' bounded below; with sign = -1 ``gamma_max`` must
    stay below ``gamma_inf``.
    """

    variant: str
    sigma_s: float
    beta: float
    gamma_inf: float = math.inf
    sign: int = 1
    gamma_max: float = math.inf

    def __post_init__(self):
        if self.variant not in ("linear", "logarithmic"):
            raise ValueError(f"unknown sigma variant {self.variant!r}")
        if not self.sigma_s > 0:
            raise ValueError("sigma(0) = sigma_s must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive (sigma must decrease)")
        if self.variant == "logarithmic":
            if self.sign not in (1, -1):
                raise ValueError("sign must be +1 or -1")
            if not (0 < self.gamma_inf < math.inf):
                raise ValueError("gamma_inf must be positive and finite")
            if not (self.gamma_max < math.inf):
                raise ValueError("the logarithmic model needs a finite gamma_max")
            if self.sign == -1 and not self.gamma_max < self.gamma_inf:
                raise ValueError("gamma_max must lie below gamma_inf for sign = -1")
            # the entropy is anchored at r = 1
            if not self.gamma_max >= 1.0:
                raise ValueError("gamma_max must be at least 1")

    @classmethod
    def linear(cls, sigma_s: float, beta: float) -> "SigmaModel":
        return cls("linear", float(sigma_s), float(beta))

    @classmethod
    def logarithmic(cls, sigma_s, beta, gamma_inf, sign, gamma_max) -> "SigmaModel":
        return cls("logarithmic", float(sigma_s), float(beta), float(gamma_inf),
                   int(sign), float(gamma_max))

    # bounds on -sigma' over [0, gamma_max]
    @property
    def sigma0(self) -> float:
        if self.variant == "linear":
            return self.beta
        if self.sign == 1:
            return self.beta / (self.gamma_inf + self.gamma_max)
        return self.beta / self.gamma_inf

    @property
    def sigma_inf(self) -> float:
        if self.variant == "linear":
            return self.beta
        if self.sign == 1:
            return self.beta / self.gamma_inf
        return self.beta / (self.gamma_inf - self.gamma_max)

    def check_domain(self, r):
        r = np.asarray(r, dtype=float)
        if r.size == 0:
            return r
        lo, hi = r.min(), r.max()
        # NaN fails both comparisons
        if not (lo >= 0 and hi <= self.gamma_max and hi < math.inf):
            bad = r[~((r >= 0) & (r <= self.gamma_max) & np.isfinite(r))]
            raise DomainError(
                f"concentration {bad.flat[0]!r} outside admissible range [0, {self.gamma_max}]"
            )
        return r

    def sigma(self, r):
        r = self.check_domain(r)
        if self.variant == "linear":
            return self.sigma_s - self.beta * r
        s = self.sign
        return self.sigma_s - s * self.beta * np.log1p(s * r / self.gamma_inf)

    def sigma_prime(self, r):
        r = self.check_domain(r)
        if self.variant == "linear":
            return np.full_like(r, -self.beta)
        return -self.beta / (self.gamma_inf + self.sign * r)

    def sigma_second(self, r):
        r = self.check_domain(r)
        if self.variant == "linear":
            return np.zeros_like(r)
        return self.sign * self.beta / (self.gamma_inf + self.sign * r) ** 2

    def secant(self, a, b):
        """(sigma(b) - sigma(a)) / (b - a), equal to sigma'(a) when a == b.

        Evaluated without cancellation so it stays accurate for nearby
        arguments.
        """
        a = self.check_domain(a)
        b = self.check_domain(b)
        if self.variant == "linear":
            return np.full(np.broadcast(a, b).shape, -self.beta)
        s, g = self.sign, self.gamma_inf
        z = s * (b - a) / (g + s * a)
        small = np.abs(z) < 1e-8
        zs = np.where(small, 1.0, z)
        ratio = np.where(small, 1.0 - 0.5 * z + z * z / 3.0, np.log1p(zs) / zs)
        return -self.beta / (g + s * a) * ratio


@dataclass(frozen=True)
class ModelParams:
    G: float
    D: float
    sigma: SigmaModel
    eps: float = 1e-2
    eta1: float = DEFAULT_ETA1

    def __post_init__(self):
        if not self.G > 0:
            raise ValueError("G must be positive")
        if not self.D > 0:
            raise ValueError("D must be positive")
        if not 0 < self.eps < 1:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        if not ETA < self.eta1 < 1:
            raise ValueError(f"eta1 must lie in ({ETA}, 1), got {self.eta1}")

    @property
    def eta(self) -> float:
        return ETA

    @property
    def sqrt_eps(self) -> float:
        return math.sqrt(self.eps)


def a1(r, G):
    r = np.asarray(r, dtype=float)
    return G * r**3 / 3.0


def a2_eps(r, eps):
    r = np.asarray(r, dtype=float)
    return 0.5 * (r - math.sqrt(eps)) ** 2


def b2_eps(r, eps):
    return np.asarray(r, dtype=float) - eps


def alpha0(r, s, eta1):
    return eta1 * np.asarray(s, dtype=float) + (1.0 - eta1) * np.asarray(r, dtype=float)


def alpha1(r, G):
    """Antiderivative of sqrt(a1) vanishing at 0: (2/5) sqrt(G/3) r^(5/2)."""
    r = np.asarray(r, dtype=float)
    return 0.4 * math.sqrt(G / 3.0) * r**2.5


def alpha1_secant(a, b, G):
    """(alpha1(b) - alpha1(a)) / (b - a) for a, b >= 0, free of cancellation.

    With s = sqrt(a), t = sqrt(b) the quotient is
    c (t^4 + t^3 s + t^2 s^2 + t s^3 + s^4) / (t + s). Returns 0 when a = b = 0.
    """
    s = np.sqrt(np.asarray(a, dtype=float))
    t = np.sqrt(np.asarray(b, dtype=float))
    num = t**4 + t**3 * s + (t * s) ** 2 + t * s**3 + s**4
    den = t + s
    out = np.zeros(np.broadcast(s, t).shape)
    np.divide(num, den, out=out, where=den > 0)
    return 0.4 * math.sqrt(G / 3.0) * out


def A1(r, G):
    """Antiderivative of a1 vanishing at 0: G r^4 / 12."""
    r = np.asarray(r, dtype=float)
    return G * r**4 / 12.0


def beta1_prime(r, sigma: SigmaModel):
    r = np.asarray(r, dtype=float)
    return r * np.abs(sigma.sigma_prime(r))


def beta1(r, sigma: SigmaModel):
    r = sigma.check_domain(r)
    if sigma.variant == "linear":
        return 0.5 * sigma.beta * r * r
    s, g = sigma.sign, sigma.gamma_inf
    return sigma.beta * (s * r - g * np.log1p(s * r / g))


def phi(r, sigma: SigmaModel):
    """Entropy with phi'' = -sigma'(r)/r and phi(1) = phi'(1) = 0.

    phi(0) is the continuous extension.
    """
    r = sigma.check_domain(r)
    if sigma.variant == "linear":
        return sigma.beta * (xlogy(r, r) - r + 1.0)
    s, g = sigma.sign, sigma.gamma_inf
    c = sigma.beta / g
    u, u1 = g + s * r, g + s

    def big_i(v):
        # antiderivative in r of ln(g + s r), written in v = g + s r
        return s * (xlogy(v, v) - v)

    return c * (xlogy(r, r) - r + 1.0 - (big_i(u) - big_i(u1)) + math.log(u1) * (r - 1.0))


def phi_prime(r, sigma: SigmaModel):
    r = sigma.check_domain(r)
    if sigma.variant == "linear":
        return sigma.beta * np.log(r)
    s, g = sigma.sign, sigma.gamma_inf
    return (sigma.beta / g) * (np.log(r) - np.log((g + s * r) / (g + s)))


# Generic quadrature routes. They only need sigma_prime and serve any model
# without closed forms; the closed forms above are checked against them.

def beta1_quad(r, sigma: SigmaModel, tol: float = 1e-12):
    def one(x):
        val, _ = integrate.quad(lambda p: p * abs(float(sigma.sigma_prime(p))), 0.0, x,
                                epsabs=tol, epsrel=tol, limit=200)
        return val

    return np.vectorize(one, otypes=[float])(sigma.check_domain(r))


def phi_quad(r, sigma: SigmaModel, tol: float = 1e-12):
    """phi(r) = int_1^r (r - p) (-sigma'(p)/p) dp, the repeated integral in one pass."""

    def one(x):
        if x == 1.0:
            return 0.0
        val, _ = integrate.quad(lambda p: (x - p) * (-float(sigma.sigma_prime(p))) / p,
                                1.0, x, epsabs=tol, epsrel=tol, limit=200)
        return val

    return np.vectorize(one, otypes=[float])(sigma.check_domain(r))
