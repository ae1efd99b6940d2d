"""Domain types for RIS phase calibration.

Phases are radians everywhere inside the package. Gear and element numbers
are 1-based in files and in the public ``q``/``o`` index arguments; arrays
are indexed from 0 internally.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class RisConfig:
    """Array sizes, phase-shifter resolution and noise level of one setup."""

    m_ris: int
    bits: int
    m_r: int
    n_pilot: int = 100
    o_groups: int = 15
    snr_db: float = 20.0

    def __post_init__(self):
        for name in ("m_ris", "bits", "m_r", "n_pilot", "o_groups"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise ValueError(f"{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.bits < 1:
            raise ValueError(f"bits must be >= 1, got {self.bits}")
        if self.m_ris < 1 or self.m_r < 1 or self.n_pilot < 1 or self.o_groups < 1:
            raise ValueError("m_ris, m_r, n_pilot and o_groups must all be >= 1")
        if not math.isfinite(self.snr_db):
            raise ValueError(f"snr_db must be finite, got {self.snr_db}")
        object.__setattr__(self, "snr_db", float(self.snr_db))

    @property
    def l_gears(self) -> int:
        return 2 ** self.bits

    @property
    def delta(self) -> float:
        """Nominal phase step between adjacent gears."""
        return TWO_PI / self.l_gears

    @property
    def q_total(self) -> int:
        return self.o_groups * self.l_gears

    @property
    def noise_var(self) -> float:
        return 10.0 ** (-self.snr_db / 10.0)

    def with_(self, **changes) -> "RisConfig":
        return dataclasses.replace(self, **changes)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PhaseTable:
    """M_ris x L matrix of per-element, per-gear phase shifts."""

    phases: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.phases, dtype=float)
        if p.ndim != 2:
            raise ValueError(f"phase table must be 2-D, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("phase table contains non-finite entries")
        object.__setattr__(self, "phases", _readonly(wrap_2pi(p)))

    @property
    def m_ris(self) -> int:
        return self.phases.shape[0]

    @property
    def l_gears(self) -> int:
        return self.phases.shape[1]

    def column(self, m: int) -> np.ndarray:
        """Phases of element ``m`` (0-based) over all gears."""
        return self.phases[m]

    def __eq__(self, other):
        if not isinstance(other, PhaseTable):
            return NotImplemented
        return self.phases.shape == other.phases.shape and np.array_equal(self.phases, other.phases)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ChannelSet:
    """Direct, Tx->RIS and RIS->Rx channels plus the cascaded channel."""

    h_br_bt: np.ndarray
    h_r_bt: np.ndarray
    h_brr: np.ndarray
    h_cas: np.ndarray = field(init=False)

    def __post_init__(self):
        h_br_bt = np.asarray(self.h_br_bt, dtype=complex).reshape(-1)
        h_r_bt = np.asarray(self.h_r_bt, dtype=complex).reshape(-1)
        h_brr = np.atleast_2d(np.asarray(self.h_brr, dtype=complex))
        if h_brr.shape != (h_br_bt.size, h_r_bt.size):
            raise ValueError(
                f"h_brr shape {h_brr.shape} inconsistent with "
                f"M_r={h_br_bt.size}, M_ris={h_r_bt.size}"
            )
        object.__setattr__(self, "h_br_bt", _readonly(h_br_bt))
        object.__setattr__(self, "h_r_bt", _readonly(h_r_bt))
        object.__setattr__(self, "h_brr", _readonly(h_brr))
        object.__setattr__(self, "h_cas", _readonly(h_brr * h_r_bt[np.newaxis, :]))

    @property
    def m_r(self) -> int:
        return self.h_br_bt.size

    @property
    def m_ris(self) -> int:
        return self.h_r_bt.size

    def __eq__(self, other):
        if not isinstance(other, ChannelSet):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("h_br_bt", "h_r_bt", "h_brr")
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Despread effective-channel estimates, one row per gear vector.

    ``h_hat`` has shape (Q, M_r); row ``q - 1`` is the estimate for the
    q-th gear vector of ``schedule``.
    """

    h_hat: np.ndarray
    schedule: "GearSchedule"
    noise_var_eff: float

    def __post_init__(self):
        h_hat = np.atleast_2d(np.asarray(self.h_hat, dtype=complex))
        if h_hat.shape[0] != self.schedule.q_total:
            raise ValueError(
                f"{h_hat.shape[0]} measurements for a schedule of {self.schedule.q_total}"
            )
        object.__setattr__(self, "h_hat", _readonly(h_hat))
        object.__setattr__(self, "noise_var_eff", float(self.noise_var_eff))

    @property
    def q_total(self) -> int:
        return self.h_hat.shape[0]

    @property
    def m_r(self) -> int:
        return self.h_hat.shape[1]


def wrap_2pi(angle):
    """Wrap angles into [0, 2*pi)."""
    w = np.mod(angle, TWO_PI)
    # mod of a tiny negative number rounds up to exactly 2*pi
    return np.where(w >= TWO_PI, 0.0, w)


def wrap_pm_pi(angle):
    """Wrap angles into (-pi, pi]."""
    a = np.asarray(angle, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("cannot wrap non-finite angle")
    w = np.pi - np.mod(np.pi - a, TWO_PI)
    if w.ndim == 0:
        return float(w)
    return w


def nominal_table(cfg: RisConfig) -> PhaseTable:
    gears = np.arange(cfg.l_gears) * cfg.delta
    return PhaseTable(np.tile(gears, (cfg.m_ris, 1)))


def sample_deviations(cfg: RisConfig, eps_max: float, rng_seed) -> np.ndarray:
    """Draw i.i.d. uniform deviations on [-eps_max, eps_max], shape (M_ris, L)."""
    if not (0.0 <= eps_max < np.pi):
        raise ValueError(f"eps_max must lie in [0, pi), got {eps_max}")
    rng = np.random.default_rng(rng_seed)
    return rng.uniform(-eps_max, eps_max, size=(cfg.m_ris, cfg.l_gears))


def sample_deviated_table(cfg: RisConfig, eps_max: float, rng_seed) -> PhaseTable:
    """Nominal phases plus independent uniform deviations per (element, gear)."""
    eps = sample_deviations(cfg, eps_max, rng_seed)
    nominal = np.arange(cfg.l_gears) * cfg.delta
    return PhaseTable(nominal[np.newaxis, :] + eps)
