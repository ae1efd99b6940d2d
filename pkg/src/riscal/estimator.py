"""Quasi-neural-network phase estimator trained by per-sample backpropagation.

The network output for gear vector ``g`` is ``H_cas @ exp(1j * phi)`` with
``phi[m] = P[m, g[m]]``; both the phase table ``P`` and the cascaded channel
``H_cas`` are trainable weights.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np

from .channel import crandn
from .model import MeasurementSet, PhaseTable, RisConfig, nominal_table
from .schedule import GearSchedule, check_identifiable

log = logging.getLogger(__name__)

DEFAULT_LR = 5e-3
DEFAULT_EPS_STOP = 1e-5
DEFAULT_MAX_EPOCHS = 10_000
STOP_RULES = ("relative", "absolute")
# an epoch cost this many times the previous one counts as divergence
BLOWUP_FACTOR = 10.0


class DivergenceError(FloatingPointError):
    """Training produced a non-finite cost."""


def _check_dims(h_cas, phi):
    h_cas = np.atleast_2d(np.asarray(h_cas, dtype=complex))
    phi = np.asarray(phi, dtype=float).reshape(-1)
    if h_cas.shape[1] != phi.size:
        raise ValueError(f"H_cas has {h_cas.shape[1]} columns but {phi.size} phases were given")
    return h_cas, phi


def forward(h_cas, phi) -> np.ndarray:
    """Network output ``H_cas @ exp(1j*phi)``."""
    h_cas, phi = _check_dims(h_cas, phi)
    return h_cas @ np.exp(1j * phi)


def cost(h_hat_q, h_qnn) -> float:
    h_hat_q = np.asarray(h_hat_q, dtype=complex).reshape(-1)
    h_qnn = np.asarray(h_qnn, dtype=complex).reshape(-1)
    if h_hat_q.size != h_qnn.size:
        raise ValueError(f"length mismatch: {h_hat_q.size} vs {h_qnn.size}")
    d = h_hat_q - h_qnn
    return float(np.vdot(d, d).real)


def _residual(h_cas, phi, h_hat_q):
    h_cas, phi = _check_dims(h_cas, phi)
    h_hat_q = np.asarray(h_hat_q, dtype=complex).reshape(-1)
    if h_hat_q.size != h_cas.shape[0]:
        raise ValueError(f"label has {h_hat_q.size} entries, H_cas has {h_cas.shape[0]} rows")
    e = np.exp(1j * phi)
    return h_cas, e, h_hat_q - h_cas @ e


def grad_phi(h_cas, phi, h_hat_q) -> np.ndarray:
    """Derivative of the cost with respect to each applied phase (real)."""
    h_cas, e, r = _residual(h_cas, phi, h_hat_q)
    return -2.0 * np.imag((h_cas.conj().T @ r) * e.conj())


def grad_hcas(h_cas, phi, h_hat_q) -> np.ndarray:
    """Conjugate (Wirtinger) gradient dC/dH_cas*.

    The real derivatives are ``dC/dRe(H) = 2*Re(g)`` and ``dC/dIm(H) = 2*Im(g)``.
    """
    h_cas, e, r = _residual(h_cas, phi, h_hat_q)
    return np.outer(-r, e.conj())


@dataclass(frozen=True, eq=False)
class QnnState:
    """Trainable weights plus bookkeeping.

    ``phases`` is the raw (unwrapped) M_ris x L phase table being trained.
    """

    h_cas_est: np.ndarray
    phases: np.ndarray
    learning_rate: float = DEFAULT_LR
    epoch: int = 0
    c_ave_history: tuple = field(default=())

    @property
    def table_est(self) -> PhaseTable:
        return PhaseTable(self.phases)


def sgd_step(state: QnnState, sample) -> QnnState:
    """One backpropagation update on a single (gear vector, label) pair.

    ``sample`` is ``(gears, h_hat_q)`` with 0-based gear indices. Both
    gradients are evaluated at the current weights before either is applied.
    """
    gears, h_hat_q = sample
    gears = np.asarray(gears, dtype=np.int64).reshape(-1)
    m_idx = np.arange(gears.size)
    phi = state.phases[m_idx, gears]
    g_phi = grad_phi(state.h_cas_est, phi, h_hat_q)
    g_h = grad_hcas(state.h_cas_est, phi, h_hat_q)
    lr = state.learning_rate
    phases = np.array(state.phases, dtype=float, copy=True)
    phases[m_idx, gears] = phi - lr * g_phi
    return QnnState(
        h_cas_est=state.h_cas_est - lr * g_h,
        phases=phases,
        learning_rate=lr,
        epoch=state.epoch,
        c_ave_history=state.c_ave_history,
    )


@numba.njit(cache=True)
def _epoch_kernel(h, phases, gears, h_hat, lr):  # pragma: no cover - compiled
    # In-place sweep over all samples; returns the summed pre-update cost.
    n_q, m_ris = gears.shape
    m_r = h.shape[0]
    e = np.empty(m_ris, dtype=np.complex128)
    r = np.empty(m_r, dtype=np.complex128)
    loss = 0.0
    for q in range(n_q):
        for m in range(m_ris):
            e[m] = np.exp(1j * phases[m, gears[q, m]])
        for i in range(m_r):
            acc = h_hat[q, i]
            for m in range(m_ris):
                acc -= h[i, m] * e[m]
            r[i] = acc
            loss += acc.real * acc.real + acc.imag * acc.imag
        for m in range(m_ris):
            s = 0j
            for i in range(m_r):
                s += np.conj(h[i, m]) * r[i]
            g_phi = -2.0 * (s * np.conj(e[m])).imag
            ec = lr * np.conj(e[m])
            for i in range(m_r):
                h[i, m] += r[i] * ec
            phases[m, gears[q, m]] -= lr * g_phi
    return loss


def run_epoch(h_cas: np.ndarray, phases: np.ndarray, gears: np.ndarray, h_hat: np.ndarray,
              lr: float) -> float:
    """Sweep all samples once in order, updating ``h_cas`` and ``phases`` in place.

    Returns the epoch's average cost, each sample's cost taken before its update.
    """
    loss = _epoch_kernel(h_cas, phases, gears, h_hat, float(lr))
    return loss / gears.shape[0]


@dataclass(frozen=True, eq=False)
class CalibrationReport:
    table_est: PhaseTable
    h_cas_est: np.ndarray
    epochs_run: int
    final_c_ave: float
    converged: bool
    c_ave_history: np.ndarray


def init_state(cfg: RisConfig, rng_seed, lr: float = DEFAULT_LR) -> QnnState:
    """Nominal phase table and a CN(0, 1) random cascaded channel."""
    rng = np.random.default_rng(rng_seed)
    h0 = crandn(rng, (cfg.m_r, cfg.m_ris))
    return QnnState(h_cas_est=h0, phases=np.array(nominal_table(cfg).phases), learning_rate=lr)


def calibrate(measurements: MeasurementSet, sched: GearSchedule, cfg: RisConfig,
              lr: float = DEFAULT_LR, eps_stop: float = DEFAULT_EPS_STOP,
              max_epochs: int = DEFAULT_MAX_EPOCHS, rng_seed=0,
              stop_rule: str = "relative") -> CalibrationReport:
    """Train the network on all measurements until the epoch cost stalls.

    Training stops after the first epoch whose average cost improves on the
    previous epoch by less than ``eps_stop`` (``converged=True``), or after
    ``max_epochs`` epochs (``converged=False``). With ``stop_rule="relative"``
    the improvement is measured as a fraction of the previous epoch's cost,
    which keeps one threshold meaningful across noise levels; ``"absolute"``
    compares the raw difference. A cost that grows tenfold in one epoch, or
    turns non-finite, raises ``DivergenceError``.
    """
    if sched.m_ris != cfg.m_ris or sched.l_gears != cfg.l_gears:
        raise ValueError("schedule does not match the configuration")
    if measurements.q_total != sched.q_total:
        raise ValueError(f"{measurements.q_total} measurements for {sched.q_total} gear vectors")
    if measurements.m_r != cfg.m_r:
        raise ValueError(f"measurements have {measurements.m_r} antennas, config has {cfg.m_r}")
    if max_epochs < 1:
        raise ValueError("max_epochs must be >= 1")
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if stop_rule not in STOP_RULES:
        raise ValueError(f"stop_rule must be one of {STOP_RULES}, got {stop_rule!r}")
    check_identifiable(cfg.with_(o_groups=sched.o_groups))

    state = init_state(cfg, rng_seed, lr)
    h = np.array(state.h_cas_est, dtype=np.complex128, order="C")
    phases = np.array(state.phases, dtype=np.float64, order="C")
    gears = np.ascontiguousarray(sched.gears, dtype=np.int64)
    h_hat = np.ascontiguousarray(measurements.h_hat, dtype=np.complex128)

    history = []
    converged = False
    for epoch in range(1, max_epochs + 1):
        c_ave = run_epoch(h, phases, gears, h_hat, lr)
        if not np.isfinite(c_ave) or not np.all(np.isfinite(h)):
            raise DivergenceError(
                f"cost became non-finite at epoch {epoch} with learning rate {lr:g}; "
                "try a smaller learning rate"
            )
        if history and c_ave > BLOWUP_FACTOR * history[-1]:
            raise DivergenceError(
                f"cost jumped from {history[-1]:.3g} to {c_ave:.3g} at epoch {epoch} with learning "
                f"rate {lr:g}; try a smaller learning rate"
            )
        history.append(c_ave)
        if epoch > 1:
            gain = history[-2] - c_ave
            if stop_rule == "relative":
                gain /= history[-2]
            if gain < eps_stop:
                converged = True
                break
    log.debug("calibration stopped after %d epochs, C_ave=%.3e", len(history), history[-1])
    return CalibrationReport(
        table_est=PhaseTable(phases),
        h_cas_est=h,
        epochs_run=len(history),
        final_c_ave=history[-1],
        converged=converged,
        c_ave_history=np.asarray(history),
    )


def per_iteration_flops(cfg: RisConfig) -> float:
    """Complex multiplications spent on the two gradients for one sample.

    ``H^H r`` costs M_r*M_ris, the Hadamard product feeding only an imaginary
    part costs half a multiplication per element, and the outer product for
    the channel gradient costs another M_r*M_ris.
    """
    return 2 * cfg.m_r * cfg.m_ris + cfg.m_ris / 2
