"""Cramer-Rao bound on the gear phases.

The unknowns are the phases of gears 2..L of every element (gear 1 is the
reference absorbed into the channel) plus the real and imaginary parts of
``vec(H_cas)``. For group ``o`` the noiseless observation is the stacked
vector ``mu_o`` whose entry ``i*L + k`` is antenna ``i`` of the group's
``k``-th measurement.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import PhaseTable, RisConfig
from .schedule import GearSchedule, _check_table, min_measurements

MAX_CONDITION = 1e12


class SingularFisherError(np.linalg.LinAlgError):
    """Fisher information is singular or too ill-conditioned to invert."""


@dataclass(frozen=True, eq=False)
class CrbResult:
    fim: np.ndarray
    crb_omega_rad2: np.ndarray
    condition: float
    l_gears: int

    @property
    def crb_omega_deg(self) -> np.ndarray:
        return np.rad2deg(np.sqrt(self.crb_omega_rad2))

    @property
    def crb_rmse_deg(self) -> float:
        """Root of the mean phase CRB, in degrees."""
        return float(np.rad2deg(np.sqrt(np.mean(self.crb_omega_rad2))))

    def omega_table_deg(self) -> np.ndarray:
        """Per-phase bound reshaped to (M_ris, L-1): rows are elements, columns gears 2..L."""
        return self.crb_omega_deg.reshape(-1, self.l_gears - 1)


def _group_phases(table: PhaseTable, sched: GearSchedule, o: int) -> np.ndarray:
    """Phases applied in each measurement of group ``o``, shape (L, M_ris)."""
    _check_table(sched, table)
    g = sched.group(o)
    return table.phases[np.arange(sched.m_ris)[np.newaxis, :], g]


def group_mean(h_cas, table: PhaseTable, sched: GearSchedule, o: int) -> np.ndarray:
    """Noiseless stacked measurements of group ``o`` (1-based), length L*M_r."""
    h_cas = np.atleast_2d(np.asarray(h_cas, dtype=complex))
    phi = _group_phases(table, sched, o)
    # rows: measurements in the group, columns: receive antennas
    x = np.exp(1j * phi) @ h_cas.T
    return x.T.reshape(-1)


def jacobian_omega(h_cas, table: PhaseTable, sched: GearSchedule, o: int) -> np.ndarray:
    """d mu_o / d phi[m, l] for gears l = 2..L, columns ordered element-major."""
    h_cas = np.atleast_2d(np.asarray(h_cas, dtype=complex))
    _check_table(sched, table)
    g = sched.group(o)
    L, m_ris = g.shape
    m_r = h_cas.shape[0]
    jac = np.zeros((L * m_r, m_ris * (L - 1)), dtype=complex)
    rows_i = np.arange(m_r) * L
    for m in range(m_ris):
        # position of gear l within this group's measurement order
        k_of_gear = np.argsort(g[:, m])
        for l in range(1, L):
            col = m * (L - 1) + (l - 1)
            jac[rows_i + k_of_gear[l], col] = 1j * h_cas[:, m] * np.exp(1j * table.phases[m, l])
    return jac


def jacobian_h(table: PhaseTable, sched: GearSchedule, o: int, m_r: int):
    """Derivatives of mu_o with respect to Re and Im of vec(H_cas).

    Column ``i + j*M_r`` belongs to entry (i, j) of H_cas (column-major vec).
    Returns ``(d_re, d_im)`` with ``d_im == 1j * d_re``.
    """
    phi = _group_phases(table, sched, o)
    L, m_ris = phi.shape
    e = np.exp(1j * phi)
    d_re = np.zeros((L * m_r, m_r * m_ris), dtype=complex)
    for j in range(m_ris):
        for i in range(m_r):
            d_re[i * L:(i + 1) * L, i + j * m_r] = e[:, j]
    return d_re, 1j * d_re


def group_jacobian(h_cas, table: PhaseTable, sched: GearSchedule, o: int) -> np.ndarray:
    """Full d mu_o / d eta = [d/dOmega, d/dRe(h), d/dIm(h)]."""
    h_cas = np.atleast_2d(np.asarray(h_cas, dtype=complex))
    d_re, d_im = jacobian_h(table, sched, o, h_cas.shape[0])
    return np.hstack([jacobian_omega(h_cas, table, sched, o), d_re, d_im])


def fisher_matrix(h_cas, table: PhaseTable, sched: GearSchedule, n_pilot: int,
                  noise_var: float) -> np.ndarray:
    """Sum over groups of (N/sigma^2) Re[D_o^H D_o]."""
    if noise_var <= 0:
        raise ValueError("Fisher information needs a positive noise variance")
    fim = None
    for o in range(1, sched.o_groups + 1):
        d = group_jacobian(h_cas, table, sched, o)
        term = (d.conj().T @ d).real
        fim = term if fim is None else fim + term
    fim = 0.5 * (fim + fim.T)
    return (n_pilot / noise_var) * fim


def fisher(h_cas, table: PhaseTable, sched: GearSchedule, cfg: RisConfig,
           noise_var: float | None = None) -> CrbResult:
    """Fisher information and the phase CRBs.

    ``noise_var`` defaults to the per-sample receiver noise implied by
    ``cfg.snr_db``. Raises SingularFisherError when the information matrix
    cannot be inverted reliably.
    """
    sigma2 = cfg.noise_var if noise_var is None else float(noise_var)
    h_cas = np.atleast_2d(np.asarray(h_cas, dtype=complex))
    if h_cas.shape != (cfg.m_r, cfg.m_ris):
        raise ValueError(f"H_cas shape {h_cas.shape} != ({cfg.m_r}, {cfg.m_ris})")
    if sched.l_gears != cfg.l_gears or sched.m_ris != cfg.m_ris:
        raise ValueError("schedule does not match the configuration")
    fim = fisher_matrix(h_cas, table, sched, cfg.n_pilot, sigma2)
    n_omega = cfg.m_ris * (cfg.l_gears - 1)

    eig = np.linalg.eigvalsh(fim)
    cond = np.inf if eig[0] <= 0 else eig[-1] / eig[0]
    if not cond <= MAX_CONDITION:
        q_min, o_min = min_measurements(cfg.with_(o_groups=sched.o_groups))
        hint = (
            f"O={sched.o_groups} is below O_min={o_min} (Q_min={q_min})"
            if sched.o_groups < o_min
            else "the channel may be degenerate (e.g. an all-zero column of H_cas)"
        )
        raise SingularFisherError(
            f"Fisher information is singular (condition number {cond:.3g} > {MAX_CONDITION:g}); {hint}"
        )
    cho = scipy.linalg.cho_factor(fim, lower=True)
    # only the phase block of the inverse is needed
    rhs = np.zeros((fim.shape[0], n_omega))
    rhs[np.arange(n_omega), np.arange(n_omega)] = 1.0
    inv_cols = scipy.linalg.cho_solve(cho, rhs)
    crb = np.diag(inv_cols[:n_omega]).copy()
    return CrbResult(fim=fim, crb_omega_rad2=crb, condition=float(cond), l_gears=cfg.l_gears)
