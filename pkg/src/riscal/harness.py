"""Monte Carlo experiments: convergence, RMSE against the CRB, runtime scaling.

Every trial derives its random streams from ``(master_seed, trial)`` through
``numpy.random.SeedSequence``, so a trial draws the same channel, phase
deviations, schedule, pilot and initial weights at every SNR; only the noise
level changes. Results are sorted by (snr, trial) before they are written.
"""
from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import ChannelModelSpec, generate_channels, generate_pilot, measure_set
from .crb import fisher
from .estimator import (
    DEFAULT_EPS_STOP, DEFAULT_LR, DEFAULT_MAX_EPOCHS, calibrate, init_state, run_epoch,
)
from .model import PhaseTable, RisConfig, nominal_table, sample_deviated_table, wrap_pm_pi
from .schedule import build_schedule

log = logging.getLogger(__name__)

# child stream order within a trial's SeedSequence
_STREAMS = ("table", "channel", "schedule", "pilot", "noise", "init")


@dataclass(frozen=True)
class ExperimentConfig:
    ris: RisConfig
    channel: ChannelModelSpec = field(default_factory=ChannelModelSpec)
    eps_max: float = float(np.deg2rad(20.0))
    snr_list: tuple = (0.0, 10.0, 20.0, 30.0)
    trials: int = 20
    master_seed: int = 0
    lr: float = DEFAULT_LR
    eps_stop: float = DEFAULT_EPS_STOP
    max_epochs: int = DEFAULT_MAX_EPOCHS
    stop_rule: str = "relative"
    out_dir: str = "results"
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if len(self.snr_list) == 0:
            raise ValueError("snr_list must not be empty")
        object.__setattr__(self, "snr_list", tuple(float(s) for s in self.snr_list))

    def with_(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class TrialResult:
    snr_db: float
    trial: int
    rmse_deg: float
    crb_rmse_deg: float
    epochs_run: int
    final_c_ave: float
    converged: bool
    sq_err_sum: float
    crb_sum: float
    n_phases: int
    wall_time: dict


@dataclass(frozen=True, eq=False)
class TrialSetup:
    cfg: RisConfig
    table: PhaseTable
    channels: object
    schedule: object
    pilot: object
    noise_seed: np.random.SeedSequence
    init_seed: np.random.SeedSequence


def trial_seeds(master_seed: int, trial: int) -> dict:
    """Independent seed streams for one trial."""
    children = np.random.SeedSequence(master_seed, spawn_key=(trial,)).spawn(len(_STREAMS))
    return dict(zip(_STREAMS, children))


def make_trial(exp: ExperimentConfig, trial: int, snr_db: float | None = None) -> TrialSetup:
    cfg = exp.ris if snr_db is None else exp.ris.with_(snr_db=snr_db)
    seeds = trial_seeds(exp.master_seed, trial)
    return TrialSetup(
        cfg=cfg,
        table=sample_deviated_table(cfg, exp.eps_max, seeds["table"]),
        channels=generate_channels(exp.channel, cfg, seeds["channel"]),
        schedule=build_schedule(cfg, seeds["schedule"]),
        pilot=generate_pilot(cfg.n_pilot, seeds["pilot"]),
        noise_seed=seeds["noise"],
        init_seed=seeds["init"],
    )


def anchored_errors(table_est: PhaseTable, table_true: PhaseTable) -> np.ndarray:
    """Gear-1-referenced phase errors for gears 2..L, shape (M_ris, L-1), radians."""
    est = table_est.phases
    tru = table_true.phases
    if est.shape != tru.shape:
        raise ValueError(f"table shapes differ: {est.shape} vs {tru.shape}")
    rel_est = est[:, 1:] - est[:, :1]
    rel_true = tru[:, 1:] - tru[:, :1]
    return wrap_pm_pi(rel_est - rel_true)


def align_and_rmse(table_est: PhaseTable, table_true: PhaseTable) -> float:
    """RMSE in degrees of the gear-1-referenced phases.

    Each element's phases are compared relative to its own gear-1 phase,
    since a per-element common rotation cannot be observed.
    """
    e = anchored_errors(table_est, table_true)
    if e.size == 0:
        return 0.0
    return float(np.rad2deg(np.sqrt(np.mean(e ** 2))))


def run_trial(exp: ExperimentConfig, snr_db: float, trial: int, with_crb: bool = True,
              noise_var: float | None = None):
    """Simulate, calibrate and score one trial. Returns (TrialResult, CalibrationReport)."""
    setup = make_trial(exp, trial, snr_db)
    cfg = setup.cfg
    t0 = time.perf_counter()
    meas = measure_set(setup.channels, setup.table, setup.schedule, setup.pilot, cfg,
                       setup.noise_seed, noise_var=noise_var)
    t1 = time.perf_counter()
    rep = calibrate(meas, setup.schedule, cfg, lr=exp.lr, eps_stop=exp.eps_stop,
                    max_epochs=exp.max_epochs, rng_seed=setup.init_seed,
                    stop_rule=exp.stop_rule)
    t2 = time.perf_counter()
    e = anchored_errors(rep.table_est, setup.table)
    crb_sum = np.nan
    if with_crb:
        crb = fisher(setup.channels.h_cas, setup.table, setup.schedule, cfg, noise_var=noise_var)
        crb_sum = float(np.sum(crb.crb_omega_rad2))
    t3 = time.perf_counter()
    n = e.size
    result = TrialResult(
        snr_db=float(snr_db),
        trial=trial,
        rmse_deg=float(np.rad2deg(np.sqrt(np.mean(e ** 2)))),
        crb_rmse_deg=float(np.rad2deg(np.sqrt(crb_sum / n))) if with_crb else float("nan"),
        epochs_run=rep.epochs_run,
        final_c_ave=rep.final_c_ave,
        converged=rep.converged,
        sq_err_sum=float(np.sum(e ** 2)),
        crb_sum=crb_sum,
        n_phases=n,
        wall_time={"measure": t1 - t0, "calibrate": t2 - t1, "crb": t3 - t2},
    )
    return result, rep


def _trial_job(args):
    exp, snr, trial, with_crb = args
    res, rep = run_trial(exp, snr, trial, with_crb=with_crb)
    return res, rep.c_ave_history


def _run_grid(exp: ExperimentConfig, with_crb: bool):
    jobs = [(exp, snr, t, with_crb) for snr in exp.snr_list for t in range(exp.trials)]
    if exp.workers > 1:
        with ProcessPoolExecutor(max_workers=exp.workers) as pool:
            out = list(pool.map(_trial_job, jobs))
    else:
        out = [_trial_job(j) for j in jobs]
    out.sort(key=lambda r: (r[0].snr_db, r[0].trial))
    return out


def pooled_rmse_deg(results) -> float:
    """Root of the mean squared anchored error over all trials and phases."""
    sq = sum(r.sq_err_sum for r in results)
    n = sum(r.n_phases for r in results)
    return float(np.rad2deg(np.sqrt(sq / n)))


def pooled_crb_deg(results) -> float:
    crb = sum(r.crb_sum for r in results)
    n = sum(r.n_phases for r in results)
    return float(np.rad2deg(np.sqrt(crb / n)))


def run_rmse_vs_snr(exp: ExperimentConfig):
    """Per-SNR RMSE and CRB rows plus the individual trial results.

    Both columns are pooled the same way: the root of the mean over all
    trials and phases of the squared error (resp. the per-phase bound).
    """
    out = _run_grid(exp, with_crb=True)
    results = [r for r, _ in out]
    rows = []
    for snr in exp.snr_list:
        cell = [r for r in results if r.snr_db == snr]
        rmse = pooled_rmse_deg(cell)
        crb = pooled_crb_deg(cell)
        rows.append({
            "snr_db": snr, "rmse_deg": rmse, "crb_deg": crb,
            "ratio": rmse / crb, "trials": len(cell),
        })
        if snr == max(exp.snr_list) and rmse / crb > 2.0:
            log.warning(
                "RMSE is %.2fx the CRB at %.0f dB; training may have stopped at a local optimum",
                rmse / crb, snr,
            )
    return rows, results


def mean_history(histories) -> np.ndarray:
    """Average C_ave curves of unequal length, holding each at its final value."""
    n = max(len(h) for h in histories)
    padded = np.array([np.pad(h, (0, n - len(h)), mode="edge") for h in histories])
    return padded.mean(axis=0)


def run_convergence(exp: ExperimentConfig, sizes=None):
    """Trial-averaged C_ave per epoch for each (SNR, M_ris) cell.

    Returns ``(rows, finals)`` where rows hold ``epoch, c_ave, snr_db, m_ris``
    and ``finals[(snr, m_ris)]`` lists each trial's converged C_ave.
    """
    sizes = [exp.ris.m_ris] if sizes is None else list(sizes)
    rows = []
    finals = {}
    for m_ris in sizes:
        sub = exp.with_(ris=exp.ris.with_(m_ris=m_ris))
        out = _run_grid(sub, with_crb=False)
        for snr in sub.snr_list:
            hist = [h for r, h in out if r.snr_db == snr]
            finals[(snr, m_ris)] = [r.final_c_ave for r, _ in out if r.snr_db == snr]
            for epoch, c in enumerate(mean_history(hist), start=1):
                rows.append({"epoch": epoch, "c_ave": float(c), "snr_db": snr, "m_ris": m_ris})
    return rows, finals


def noise_floor(cfg: RisConfig) -> float:
    """Expected per-sample measurement noise energy 2*sigma^2*M_r/N."""
    return 2.0 * cfg.noise_var * cfg.m_r / cfg.n_pilot


def time_epochs(exp: ExperimentConfig, m_ris: int, epochs: int = 20, repeats: int = 5) -> float:
    """Best-of-``repeats`` wall time of one training epoch for an RIS of ``m_ris`` elements."""
    setup = make_trial(exp.with_(ris=exp.ris.with_(m_ris=m_ris)), 0)
    meas = measure_set(setup.channels, setup.table, setup.schedule, setup.pilot, setup.cfg,
                       setup.noise_seed)
    state = init_state(setup.cfg, setup.init_seed, exp.lr)
    gears = np.ascontiguousarray(setup.schedule.gears)
    h_hat = np.ascontiguousarray(meas.h_hat)
    # warm-up also triggers JIT compilation
    run_epoch(np.array(state.h_cas_est), np.array(state.phases), gears, h_hat, exp.lr)
    best = np.inf
    for _ in range(repeats):
        h = np.array(state.h_cas_est)
        ph = np.array(state.phases)
        t0 = time.perf_counter()
        for _ in range(epochs):
            run_epoch(h, ph, gears, h_hat, exp.lr)
        best = min(best, (time.perf_counter() - t0) / epochs)
    return best


def loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def run_runtime_scaling(sizes, exp: ExperimentConfig, epochs: int = 20, repeats: int = 5):
    """Seconds per epoch for each RIS size, plus the log-log slope."""
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise ValueError("sizes must be sorted ascending")
    rows = [{"m_ris": m, "sec_per_epoch": time_epochs(exp, m, epochs, repeats)} for m in sizes]
    slope = loglog_slope([r["m_ris"] for r in rows], [r["sec_per_epoch"] for r in rows])
    return rows, slope


def nominal_baseline_rmse(exp: ExperimentConfig) -> float:
    """RMSE of reporting the nominal table, pooled over the experiment's trials."""
    nom = nominal_table(exp.ris)
    sq = 0.0
    n = 0
    for t in range(exp.trials):
        e = anchored_errors(nom, make_trial(exp, t).table)
        sq += float(np.sum(e ** 2))
        n += e.size
    return float(np.rad2deg(np.sqrt(sq / n)))
