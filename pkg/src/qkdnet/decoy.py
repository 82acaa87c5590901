"""Finite-size decoy-state bounds and the secure key rate.

The single-photon gain is bounded from below using the signal and decoy gains
and the vacuum yield; every measured quantity except the signal gain is first
widened by ``k`` standard deviations of its Poisson counting error.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive
from .errors import (
    BoundUnavailableError,
    DegenerateStatisticsError,
    InsufficientDataError,
    ParameterDomainError,
)
from .linkmodel import LinkParams, PulseClass

DEFAULT_EC_EFFICIENCY = 1.22


def binary_entropy(x):
    """Shannon entropy in bits of a Bernoulli(x) variable."""
    x = float(x)
    if not 0.0 <= x <= 1.0 or math.isnan(x):
        raise ParameterDomainError(f"binary entropy needs 0 <= x <= 1, got {x}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def fluctuation_bounds(value, n, k):
    """``value * (1 -/+ k / sqrt(n * value))``; the lower end is clamped at 0."""
    k = check_positive(k, "k")
    expected = float(n) * float(value)
    if not expected > 0:
        raise DegenerateStatisticsError(
            f"fluctuation bound needs n * value > 0, got n={n}, value={value}"
        )
    width = k / math.sqrt(expected)
    return max(0.0, value * (1.0 - width)), value * (1.0 + width)


def q1_lower(mu, nu, q_mu, q_nu_lower, y0_upper):
    """Lower bound on the single-photon contribution to the signal gain.

    The raw value is returned even when negative; callers decide whether a
    non-positive bound means "no key".
    """
    if not (0 < nu < mu):
        raise ParameterDomainError(f"need 0 < nu < mu, got mu={mu}, nu={nu}")
    prefactor = mu * mu * math.exp(-mu) / (mu * nu - nu * nu)
    bracket = (
        q_nu_lower * math.exp(nu)
        - q_mu * math.exp(mu) * nu * nu / (mu * mu)
        - y0_upper * (mu * mu - nu * nu) / (mu * mu)
    )
    return prefactor * bracket


def e1_upper(e_mu, q_mu, y0_lower, mu, q1_lower):
    """Upper bound on the single-photon error rate (may exceed 1: caller checks)."""
    if not q1_lower > 0:
        raise BoundUnavailableError(f"single-photon gain bound is not positive ({q1_lower})")
    return (e_mu * q_mu - y0_lower * math.exp(-mu) / 2.0) / q1_lower


def key_rate(q, q_mu, e_mu, f, q1_lower, e1_upper):
    """Secure key bits per pulse, clamped at zero."""
    if f < 1:
        raise ParameterDomainError(f"error-correction efficiency f must be >= 1, got {f}")
    if q1_lower <= 0:
        return 0.0
    rate = q * (-q_mu * f * binary_entropy(e_mu) + q1_lower * (1.0 - binary_entropy(e1_upper)))
    return max(0.0, rate)


def confidence_from_sigma(k):
    """Two-sided Gaussian tail mass beyond ``k`` standard deviations."""
    k = check_positive(k, "k")
    return math.erfc(k / math.sqrt(2.0))


@dataclass(frozen=True)
class DecoyEstimate:
    mu: float
    nu: float
    q_mu: float
    e_mu: float
    q_nu: float
    e_nu: float
    y0_meas: float
    n_mu: int
    n_nu: int
    n0: int
    q_nu_lower: float
    y0_lower: float
    y0_upper: float
    q1_lower: float
    e1_upper: float
    rate: float
    q: float
    f: float
    sigma_k: float
    confidence: float
    valid: bool = True
    error: str = ""

    def to_record(self):
        """Table-style record; symbol-named keys first, then every field."""
        rec = {
            "Q_mu": self.q_mu,
            "E_mu": self.e_mu,
            "Q_nu": self.q_nu,
            "E_nu": self.e_nu,
            "Q_1^L": self.q1_lower,
            "e_1^U": self.e1_upper,
            "R": self.rate,
            "q": self.q,
        }
        rec.update(asdict(self))
        return rec

    @classmethod
    def from_record(cls, rec):
        names = cls.__dataclass_fields__
        return cls(**{k: v for k, v in rec.items() if k in names})

    def with_ec_efficiency(self, f):
        """Recompute the rate for a different error-correction efficiency."""
        rate = self.rate
        if self.valid:
            rate = key_rate(self.q, self.q_mu, self.e_mu, f, self.q1_lower, self.e1_upper)
        return DecoyEstimate(**{**asdict(self), "f": float(f), "rate": rate})


def analyze_measured(
    *,
    mu,
    nu,
    q_mu,
    e_mu,
    q_nu,
    y0,
    n_nu,
    n0,
    e_nu=float("nan"),
    n_mu=0,
    sigma_k=10.0,
    q=0.5,
    f=DEFAULT_EC_EFFICIENCY,
    strict=False,
):
    """Run the bound chain on measured values.

    With ``strict=False`` failures of the bound chain (degenerate counts, a
    non-positive single-photon bound, an error bound outside [0, 1]) give an
    estimate with ``valid=False`` and ``rate=0``; with ``strict=True`` they
    raise.
    """
    if not (0 < nu < mu):
        raise ParameterDomainError(f"need 0 < nu < mu, got mu={mu}, nu={nu}")
    conf = confidence_from_sigma(sigma_k)
    base = dict(
        mu=mu, nu=nu, q_mu=q_mu, e_mu=e_mu, q_nu=q_nu, e_nu=e_nu, y0_meas=y0,
        n_mu=int(n_mu), n_nu=int(n_nu), n0=int(n0), q=q, f=f, sigma_k=sigma_k,
        confidence=conf,
    )
    nan = float("nan")
    partial = dict(q_nu_lower=nan, y0_lower=nan, y0_upper=nan, q1_lower=nan, e1_upper=nan)
    try:
        partial["q_nu_lower"], _ = fluctuation_bounds(q_nu, n_nu, sigma_k)
        partial["y0_lower"], partial["y0_upper"] = fluctuation_bounds(y0, n0, sigma_k)
        partial["q1_lower"] = q1_lower(mu, nu, q_mu, partial["q_nu_lower"], partial["y0_upper"])
        partial["e1_upper"] = e1_upper(e_mu, q_mu, partial["y0_lower"], mu, partial["q1_lower"])
        if not 0.0 <= partial["e1_upper"] <= 1.0:
            raise BoundUnavailableError(
                f"single-photon error bound {partial['e1_upper']:.4g} outside [0, 1]"
            )
        rate = key_rate(q, q_mu, e_mu, f, partial["q1_lower"], partial["e1_upper"])
    except (DegenerateStatisticsError, BoundUnavailableError) as exc:
        if strict:
            raise
        return DecoyEstimate(**base, **partial, rate=0.0, valid=False, error=str(exc))
    return DecoyEstimate(**base, **partial, rate=rate)


def analyze(stats, p: LinkParams, q=None, f=DEFAULT_EC_EFFICIENCY, strict=False):
    """Decoy analysis of tallied per-class statistics.

    ``q`` defaults to the signal fraction times the 1/2 sifting factor.
    """
    for c in PulseClass:
        if c not in stats or stats[c].sent == 0:
            raise InsufficientDataError(f"no {c.name.lower()} pulses in the statistics")
    s, d, v = stats[PulseClass.SIGNAL], stats[PulseClass.DECOY], stats[PulseClass.VACUUM]
    if q is None:
        q = p.signal_fraction * 0.5
    return analyze_measured(
        mu=p.mu,
        nu=p.nu,
        q_mu=s.gain,
        e_mu=s.qber,
        q_nu=d.gain,
        e_nu=d.qber,
        y0=v.gain,
        n_mu=s.sent,
        n_nu=d.sent,
        n0=v.sent,
        sigma_k=p.sigma_k,
        q=q,
        f=f,
        strict=strict,
    )


class DecoyStateEstimator(BaseEstimator):
    """Estimator wrapper around :func:`analyze`.

    ``fit`` takes the per-class statistics mapping produced by
    :func:`qkdnet.channel.tally`; ``predict`` turns pulse counts into expected
    secure-key bits.
    """

    def __init__(self, link_params=None, q=None, f=DEFAULT_EC_EFFICIENCY, sigma_k=None):
        self.link_params = link_params
        self.q = q
        self.f = f
        self.sigma_k = sigma_k

    def fit(self, X, y=None):
        p = self.link_params if self.link_params is not None else LinkParams()
        if self.sigma_k is not None:
            p = p.replace(sigma_k=self.sigma_k)
        est = analyze(X, p, q=self.q, f=self.f)
        self.estimate_ = est
        self.q1_lower_ = est.q1_lower
        self.e1_upper_ = est.e1_upper
        self.rate_ = est.rate
        return self

    def predict(self, n_pulses):
        check_is_fitted(self, "estimate_")
        return self.rate_ * np.asarray(n_pulses, dtype=float)
