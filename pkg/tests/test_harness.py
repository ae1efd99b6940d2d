import numpy as np
import pytest

from riscal.channel import ChannelModelSpec
from riscal.harness import (
    ExperimentConfig, align_and_rmse, anchored_errors, loglog_slope, make_trial, mean_history,
    nominal_baseline_rmse, noise_floor, pooled_rmse_deg, run_convergence, run_rmse_vs_snr,
    run_runtime_scaling, run_trial, trial_seeds,
)
from riscal.model import PhaseTable, RisConfig, nominal_table


def small_exp(**kw):
    base = dict(ris=RisConfig(m_ris=4, bits=2, m_r=4, o_groups=4), channel=ChannelModelSpec("rayleigh"),
                snr_list=(10.0, 30.0), trials=3, master_seed=11)
    base.update(kw)
    return ExperimentConfig(**base)


def test_rmse_ignores_per_element_rotation(rng):
    p = rng.uniform(0, 2 * np.pi, (5, 4))
    rot = rng.uniform(-10, 10, 5)
    assert align_and_rmse(PhaseTable(p + rot[:, None]), PhaseTable(p)) < 1e-10


def test_rmse_wraps():
    a = PhaseTable([[0.0, 0.01]])
    b = PhaseTable([[0.0, 2 * np.pi - 0.01]])
    assert align_and_rmse(a, b) == pytest.approx(np.rad2deg(0.02))
    with pytest.raises(ValueError):
        anchored_errors(a, PhaseTable([[0.0, 1.0, 2.0]]))


def test_single_gear_rmse_is_zero():
    assert align_and_rmse(PhaseTable([[1.0]]), PhaseTable([[2.0]])) == 0.0


def test_trial_seeds_common_across_snr():
    exp = small_exp()
    a = make_trial(exp, 1, 0.0)
    b = make_trial(exp, 1, 30.0)
    assert a.table == b.table
    np.testing.assert_array_equal(a.channels.h_cas, b.channels.h_cas)
    np.testing.assert_array_equal(a.schedule.gears, b.schedule.gears)
    c = make_trial(exp, 2, 0.0)
    assert not np.array_equal(a.channels.h_cas, c.channels.h_cas)
    assert set(trial_seeds(0, 0)) == {"table", "channel", "schedule", "pilot", "noise", "init"}


def test_run_trial_deterministic():
    exp = small_exp()
    a, _ = run_trial(exp, 20.0, 0)
    b, _ = run_trial(exp, 20.0, 0)
    assert a.rmse_deg == b.rmse_deg and a.crb_rmse_deg == b.crb_rmse_deg
    assert a.n_phases == 4 * 3
    assert np.isfinite(a.crb_rmse_deg)


def test_rmse_sweep_rows():
    exp = small_exp()
    rows, results = run_rmse_vs_snr(exp)
    assert [r["snr_db"] for r in rows] == [10.0, 30.0]
    assert all(r["trials"] == 3 for r in rows)
    assert rows[1]["crb_deg"] < rows[0]["crb_deg"]
    assert rows[0]["rmse_deg"] == pytest.approx(pooled_rmse_deg([r for r in results if r.snr_db == 10.0]))
    assert [(r.snr_db, r.trial) for r in results] == sorted((r.snr_db, r.trial) for r in results)


def test_parallel_matches_serial():
    exp = small_exp(trials=2, snr_list=(20.0,))
    _, a = run_rmse_vs_snr(exp)
    _, b = run_rmse_vs_snr(exp.with_(workers=2))
    assert [r.rmse_deg for r in a] == [r.rmse_deg for r in b]


def test_mean_history_pads():
    np.testing.assert_allclose(mean_history([np.array([4.0, 2.0]), np.array([2.0])]), [3.0, 2.0])


def test_convergence_rows():
    exp = small_exp(trials=2)
    rows, finals = run_convergence(exp, [4])
    assert set(finals) == {(10.0, 4), (30.0, 4)}
    assert {r["m_ris"] for r in rows} == {4}
    assert rows[0]["epoch"] == 1


def test_noise_floor():
    cfg = RisConfig(m_ris=4, bits=1, m_r=4, snr_db=10)
    assert noise_floor(cfg) == pytest.approx(2 * 0.1 * 4 / 100)


def test_loglog_slope():
    x = np.array([1, 2, 4, 8.0])
    assert loglog_slope(x, 3 * x ** 1.5) == pytest.approx(1.5)


def test_runtime_scaling_small():
    exp = small_exp()
    rows, slope = run_runtime_scaling([4, 8], exp, epochs=2, repeats=1)
    assert [r["m_ris"] for r in rows] == [4, 8]
    assert all(r["sec_per_epoch"] > 0 for r in rows)
    assert np.isfinite(slope)
    with pytest.raises(ValueError):
        run_runtime_scaling([8, 4], exp)


def test_nominal_baseline():
    eps = np.deg2rad(20)
    exp = small_exp(ris=RisConfig(m_ris=64, bits=4, m_r=4), trials=20, eps_max=eps)
    # each anchored error is the difference of two independent U(-eps, eps) draws
    expect = np.rad2deg(eps * np.sqrt(2 / 3))
    assert nominal_baseline_rmse(exp) == pytest.approx(expect, rel=0.03)
    # unanchored deviations have RMS eps/sqrt(3)
    dev = np.concatenate([make_trial(exp, t).table.phases - nominal_table(exp.ris).phases
                          for t in range(exp.trials)])
    dev = (dev + np.pi) % (2 * np.pi) - np.pi
    assert np.rad2deg(np.sqrt(np.mean(dev ** 2))) == pytest.approx(np.rad2deg(eps / np.sqrt(3)), rel=0.03)


def test_experiment_validation():
    with pytest.raises(ValueError):
        small_exp(trials=0)
    with pytest.raises(ValueError):
        small_exp(snr_list=())
