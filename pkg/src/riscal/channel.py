"""Channel generation, pilot transmission and despreading."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ChannelSet, MeasurementSet, PhaseTable, RisConfig, _readonly
from .schedule import GearSchedule, all_phases

CHANNEL_KINDS = ("rayleigh", "saleh_valenzuela")


@dataclass(frozen=True, eq=False)
class PilotSequence:
    s: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=complex).reshape(-1)
        if s.size < 1:
            raise ValueError("pilot must have at least one symbol")
        if np.max(np.abs(np.abs(s) - 1.0)) > 1e-12:
            raise ValueError("pilot symbols must have unit modulus")
        object.__setattr__(self, "s", _readonly(s))

    @property
    def n(self) -> int:
        return self.s.size


@dataclass(frozen=True)
class ChannelModelSpec:
    """Which random channel model to draw from.

    For ``saleh_valenzuela`` the rays of each cluster are spread uniformly
    within ``sv_angle_spread_deg`` of a cluster centre that is itself uniform
    over the half-plane in front of the array.
    """

    kind: str = "saleh_valenzuela"
    sv_clusters: int = 3
    sv_rays_per_cluster: int = 8
    sv_angle_spread_deg: float = 10.0

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}; expected one of {CHANNEL_KINDS}")
        if self.kind == "saleh_valenzuela":
            if self.sv_clusters < 1 or self.sv_rays_per_cluster < 1:
                raise ValueError("Saleh-Valenzuela model needs at least one cluster and one ray")
            if not 0.0 <= self.sv_angle_spread_deg <= 90.0:
                raise ValueError("sv_angle_spread_deg must lie in [0, 90]")


def crandn(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with the given variance."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def generate_pilot(n_pilot: int, rng_seed) -> PilotSequence:
    if n_pilot < 1:
        raise ValueError(f"pilot length must be >= 1, got {n_pilot}")
    rng = np.random.default_rng(rng_seed)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n_pilot)
    return PilotSequence(np.exp(1j * theta))


def ula_response(n: int, angles: np.ndarray) -> np.ndarray:
    """Half-wavelength ULA steering vectors, one column per angle."""
    k = np.arange(n)[:, np.newaxis]
    return np.exp(1j * np.pi * k * np.sin(np.asarray(angles))[np.newaxis, :])


def _sv_angles(spec: ChannelModelSpec, rng: np.random.Generator) -> np.ndarray:
    centres = rng.uniform(-np.pi / 2, np.pi / 2, size=spec.sv_clusters)
    spread = np.deg2rad(spec.sv_angle_spread_deg)
    offsets = rng.uniform(-spread, spread, size=(spec.sv_clusters, spec.sv_rays_per_cluster))
    return (centres[:, np.newaxis] + offsets).reshape(-1)


def _sv_vector(spec, n, rng):
    n_rays = spec.sv_clusters * spec.sv_rays_per_cluster
    gains = crandn(rng, n_rays, 1.0 / n_rays)
    return ula_response(n, _sv_angles(spec, rng)) @ gains


def _sv_matrix(spec, n_rx, n_tx, rng):
    n_rays = spec.sv_clusters * spec.sv_rays_per_cluster
    gains = crandn(rng, n_rays, 1.0 / n_rays)
    a_rx = ula_response(n_rx, _sv_angles(spec, rng))
    a_tx = ula_response(n_tx, _sv_angles(spec, rng))
    return (a_rx * gains[np.newaxis, :]) @ a_tx.conj().T


def generate_channels(spec: ChannelModelSpec, cfg: RisConfig, rng_seed) -> ChannelSet:
    """Draw the direct, Tx->RIS and RIS->Rx channels.

    Both models have unit average power per entry: Rayleigh entries are
    CN(0, 1); a Saleh-Valenzuela entry is a sum of unit-modulus ray
    responses with CN(0, 1/n_rays) gains.
    """
    rng = np.random.default_rng(rng_seed)
    if spec.kind == "rayleigh":
        h_br_bt = crandn(rng, cfg.m_r)
        h_r_bt = crandn(rng, cfg.m_ris)
        h_brr = crandn(rng, (cfg.m_r, cfg.m_ris))
    else:
        h_br_bt = _sv_vector(spec, cfg.m_r, rng)
        h_r_bt = _sv_vector(spec, cfg.m_ris, rng)
        h_brr = _sv_matrix(spec, cfg.m_r, cfg.m_ris, rng)
    return ChannelSet(h_br_bt, h_r_bt, h_brr)


def _as_rng(rng_seed):
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)


def simulate_rx_on(channels: ChannelSet, d_phases, pilot: PilotSequence, noise_var: float,
                   rng_seed) -> np.ndarray:
    """Received block with the RIS reflecting at phases ``d_phases``, shape (M_r, N)."""
    d_phases = np.asarray(d_phases, dtype=float).reshape(-1)
    if d_phases.size != channels.m_ris:
        raise ValueError(f"expected {channels.m_ris} RIS phases, got {d_phases.size}")
    h_eff = channels.h_brr @ (np.exp(1j * d_phases) * channels.h_r_bt) + channels.h_br_bt
    return _receive(h_eff, pilot, noise_var, rng_seed)


def simulate_rx_off(channels: ChannelSet, pilot: PilotSequence, noise_var: float,
                    rng_seed) -> np.ndarray:
    """Received block with the RIS switched off (direct path only)."""
    return _receive(channels.h_br_bt, pilot, noise_var, rng_seed)


def _receive(h_eff, pilot, noise_var, rng_seed):
    if noise_var < 0:
        raise ValueError(f"noise variance must be >= 0, got {noise_var}")
    y = np.outer(h_eff, pilot.s.conj())
    if noise_var > 0:
        y = y + crandn(_as_rng(rng_seed), y.shape, noise_var)
    return y


def despread(y, pilot: PilotSequence) -> np.ndarray:
    """Correlate a received block with the pilot: ``Y s / N``."""
    y = np.atleast_2d(np.asarray(y, dtype=complex))
    if y.shape[1] != pilot.n:
        raise ValueError(f"block has {y.shape[1]} samples, pilot has {pilot.n}")
    return y @ pilot.s / pilot.n


def measure_set(channels: ChannelSet, table: PhaseTable, sched: GearSchedule,
                pilot: PilotSequence, cfg: RisConfig, rng_seed,
                noise_var: float | None = None) -> MeasurementSet:
    """Simulate the on/off pilot pairs for every gear vector and despread them.

    Each measurement uses fresh noise for both the on and off blocks, so the
    difference carries noise of variance ``2*noise_var/N`` per entry.
    ``noise_var`` defaults to the level implied by ``cfg.snr_db``.
    """
    if sched.m_ris != channels.m_ris or table.m_ris != channels.m_ris:
        raise ValueError("schedule, table and channels disagree on the number of RIS elements")
    if sched.l_gears != table.l_gears:
        raise ValueError("schedule and table disagree on the number of gears")
    if sched.q_total != cfg.q_total:
        raise ValueError(f"schedule has {sched.q_total} gear vectors, config expects {cfg.q_total}")
    if pilot.n != cfg.n_pilot:
        raise ValueError(f"pilot length {pilot.n} != configured {cfg.n_pilot}")
    sigma2 = cfg.noise_var if noise_var is None else float(noise_var)
    rng = np.random.default_rng(rng_seed)
    phis = all_phases(sched, table)
    h_hat = np.empty((sched.q_total, channels.m_r), dtype=complex)
    for q in range(sched.q_total):
        y_on = simulate_rx_on(channels, phis[q], pilot, sigma2, rng)
        y_off = simulate_rx_off(channels, pilot, sigma2, rng)
        h_hat[q] = despread(y_on, pilot) - despread(y_off, pilot)
    return MeasurementSet(h_hat, sched, 2.0 * sigma2 / pilot.n)
