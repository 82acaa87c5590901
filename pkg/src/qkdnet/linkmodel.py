"""Link parameters, per-class statistics and the analytic weak-coherent-pulse model.

The channel model treats a pulse carrying ``n`` photons as detected with yield
``Y_n = y0 + 1 - (1 - eta)^n``.  Averaged over a Poisson source of mean ``m``
this gives the familiar gain ``Q_m = y0 + 1 - exp(-eta * m)``, and the error
weighted gain ``E_m Q_m = e0 * y0 + e_det * (1 - exp(-eta * m))``.
"""

from __future__ import annotations

import configparser
import enum
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ._validation import check_count, check_fraction, check_positive


class PulseClass(enum.IntEnum):
    SIGNAL = 0
    DECOY = 1
    VACUUM = 2


@dataclass(frozen=True)
class LinkParams:
    """Physical and statistical parameters of one QKD link.

    Losses are in dB, times in seconds, rates in Hz.  ``state_mix`` is the
    signal:decoy:vacuum ratio, ``sigma_k`` the number of standard deviations
    used by the finite-size fluctuation bounds.
    """

    mu: float = 0.65
    nu: float = 0.08
    state_mix: tuple = (6, 1, 1)
    clock_hz: float = 4.0e6
    fiber_loss_db: float = 5.6
    receiver_insertion_db: float = 3.5
    det_efficiency: float = 0.10
    y0: float = 1.0e-4
    e_det: float = 0.012
    e0: float = 0.5
    dead_time_s: float = 20e-6
    afterpulse_prob: float = 0.008
    block_seconds: float = 120.0
    sigma_k: float = 10.0
    # Hook for asymmetric basis choice; only the symmetric 1/2 is implemented.
    basis_bias: float = 0.5

    def __post_init__(self):
        mix = tuple(self.state_mix)
        object.__setattr__(self, "state_mix", mix)
        if len(mix) != 3 or any(int(c) != c or c <= 0 for c in mix):
            raise ValueError(f"state_mix must be three positive integers, got {mix}")
        object.__setattr__(self, "state_mix", tuple(int(c) for c in mix))
        check_positive(self.mu, "mu")
        check_positive(self.nu, "nu")
        if not self.nu < self.mu:
            raise ValueError(f"need 0 < nu < mu, got mu={self.mu}, nu={self.nu}")
        for name in ("y0", "e_det", "e0", "det_efficiency", "afterpulse_prob"):
            check_fraction(getattr(self, name), name)
        if self.afterpulse_prob >= 1:
            raise ValueError("afterpulse_prob must be < 1")
        check_positive(self.clock_hz, "clock_hz")
        check_positive(self.block_seconds, "block_seconds")
        check_positive(self.sigma_k, "sigma_k")
        check_positive(self.fiber_loss_db, "fiber_loss_db", allow_zero=True)
        check_positive(self.receiver_insertion_db, "receiver_insertion_db", allow_zero=True)
        check_positive(self.dead_time_s, "dead_time_s", allow_zero=True)
        if self.basis_bias != 0.5:
            raise NotImplementedError("asymmetric basis choice is not implemented")

    @property
    def class_fractions(self):
        total = sum(self.state_mix)
        return np.array(self.state_mix, dtype=float) / total

    @property
    def signal_fraction(self):
        return float(self.class_fractions[PulseClass.SIGNAL])

    @property
    def intensities(self):
        """Mean photon number per class, indexed by :class:`PulseClass`."""
        return np.array([self.mu, self.nu, 0.0])

    @property
    def dead_time_pulses(self):
        """Number of gates blocked after each detection."""
        # guard against 20e-6 * 4e6 == 79.99999...
        return int(math.floor(self.dead_time_s * self.clock_hz + 1e-9))

    @property
    def pulses_per_block(self):
        return int(round(self.block_seconds * self.clock_hz))

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        d = asdict(self)
        d["state_mix"] = list(self.state_mix)
        return d


@dataclass
class PulseClassStats:
    """Counts for one pulse class.

    ``detected`` counts every click, ``sifted`` only clicks where the bases
    matched, and ``errored`` the sifted clicks whose bit disagreed.
    """

    pulse_class: PulseClass
    sent: int = 0
    detected: int = 0
    sifted: int = 0
    errored: int = 0

    def __post_init__(self):
        self.pulse_class = PulseClass(self.pulse_class)
        for name in ("sent", "detected", "sifted", "errored"):
            setattr(self, name, check_count(getattr(self, name), name))
        if not (self.errored <= self.sifted <= self.detected <= self.sent):
            raise ValueError(
                "need errored <= sifted <= detected <= sent, got "
                f"{self.errored}, {self.sifted}, {self.detected}, {self.sent}"
            )

    @property
    def gain(self):
        return self.detected / self.sent if self.sent else 0.0

    @property
    def qber(self):
        return self.errored / self.sifted if self.sifted else 0.0

    def __add__(self, other):
        if other.pulse_class != self.pulse_class:
            raise ValueError("cannot add statistics of different pulse classes")
        return PulseClassStats(
            self.pulse_class,
            self.sent + other.sent,
            self.detected + other.detected,
            self.sifted + other.sifted,
            self.errored + other.errored,
        )


@dataclass(frozen=True)
class ChannelPrediction:
    eta_total: float
    q_signal: float
    q_decoy: float
    q_vacuum: float
    e_signal: float
    e_decoy: float
    e_vacuum: float = field(default=0.5)

    @property
    def gains(self):
        return np.array([self.q_signal, self.q_decoy, self.q_vacuum])

    @property
    def qbers(self):
        return np.array([self.e_signal, self.e_decoy, self.e_vacuum])


def total_transmittance(p):
    """Overall transmittance: detector efficiency times fiber and receiver loss."""
    loss_db = p.fiber_loss_db + p.receiver_insertion_db
    return p.det_efficiency * 10.0 ** (-loss_db / 10.0)


def photon_yield(n, eta, y0):
    """Detection probability given ``n`` photons left the source."""
    n = np.asarray(n)
    return np.minimum(1.0, y0 + 1.0 - (1.0 - eta) ** n)


def photon_error_weight(n, eta, y0, e_det, e0):
    """``e_n * Y_n``: probability of a click that carries a bit error."""
    n = np.asarray(n)
    return e0 * y0 + e_det * (1.0 - (1.0 - eta) ** n)


def ideal_gain(m, eta, y0):
    return min(1.0, y0 - math.expm1(-eta * m))


def ideal_error_weight(m, eta, y0, e_det, e0):
    return e0 * y0 - e_det * math.expm1(-eta * m)


def predict_statistics(p, detector_effects=False):
    """Expected per-class gains and QBERs.

    With ``detector_effects=False`` this is the memoryless channel model.
    With ``detector_effects=True`` the stationary dead-time and afterpulse
    corrections are applied, matching what :func:`qkdnet.channel.simulate_block`
    produces: each click blinds the next ``d`` gates, and the gate that reopens
    fires a random-bit afterpulse with probability ``a`` (which may chain).
    """
    eta = total_transmittance(p)
    m = p.intensities
    gains = np.array([ideal_gain(x, eta, p.y0) for x in m])
    err_w = np.array([ideal_error_weight(x, eta, p.y0, p.e_det, p.e0) for x in m])
    qbers = np.divide(err_w, gains, out=np.zeros(3), where=gains > 0)

    if detector_effects:
        w = p.class_fractions
        p_bar = float(w @ gains)
        if p_bar > 0:
            d = p.dead_time_pulses
            a = p.afterpulse_prob
            ap = a / (1.0 - a)  # mean afterpulses per genuine click
            cycle = 1.0 / p_bar + d + ap * (1.0 + d)
            obs_gains = (gains / p_bar + ap) / cycle
            obs_err = (err_w / p_bar + 0.5 * ap) / cycle
            qbers = np.divide(obs_err, obs_gains, out=np.zeros(3), where=obs_gains > 0)
            gains = obs_gains

    return ChannelPrediction(
        eta_total=eta,
        q_signal=float(gains[0]),
        q_decoy=float(gains[1]),
        q_vacuum=float(gains[2]),
        e_signal=float(qbers[0]),
        e_decoy=float(qbers[1]),
        e_vacuum=float(qbers[2]),
    )


# det_efficiency and e_det per preset are calibrated so the detector-effect
# prediction reproduces the measured signal gains (Q_mu 7.2e-3 and 6.36e-3,
# i.e. 10.8 and 9.54 kbps sifted) and QBERs (1.6% and 1.44%) of the two links.
PRESETS = {
    "binhu-ustc": LinkParams(
        mu=0.60, nu=0.20, fiber_loss_db=4.5, det_efficiency=0.1386, e_det=0.00918
    ),
    "ustc-xinglin": LinkParams(
        mu=0.65, nu=0.08, fiber_loss_db=5.6, det_efficiency=0.1293, e_det=0.00664
    ),
}

LINK_ENDPOINTS = {
    "binhu-ustc": ("Binhu", "USTC"),
    "ustc-xinglin": ("USTC", "Xinglin"),
}


def preset(name, **overrides):
    try:
        base = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown link preset {name!r}; known: {sorted(PRESETS)}") from None
    return base.replace(**overrides) if overrides else base


_FIELD_TYPES = {f.name: f.type for f in fields(LinkParams)}


def _coerce(name, raw):
    if name == "state_mix":
        parts = raw.replace(",", ":").split(":")
        return tuple(int(x) for x in parts)
    if name not in _FIELD_TYPES:
        raise KeyError(f"unknown link parameter {name!r}")
    return float(raw)


def params_from_mapping(mapping):
    """Build :class:`LinkParams` from string key/values, honouring ``preset``."""
    mapping = dict(mapping)
    base_name = mapping.pop("preset", None)
    overrides = {k: _coerce(k, v) for k, v in mapping.items() if k in _FIELD_TYPES}
    if base_name:
        return preset(base_name.strip(), **overrides)
    return LinkParams(**overrides)


def load_link_config(path):
    """Read ``[link:NAME]`` sections from an INI file into ``{name: LinkParams}``.

    Keys other than LinkParams field names (``endpoints``, ``link_id``) are
    ignored here so the same sections can be shared with scenario files.
    """
    parser = configparser.ConfigParser()
    with open(Path(path)) as fh:
        parser.read_file(fh)
    links = {}
    for section in parser.sections():
        if section.startswith("link:"):
            name = section.split(":", 1)[1].strip()
            links[name] = params_from_mapping(parser[section])
    return links
