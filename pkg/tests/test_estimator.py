import numpy as np
import pytest

from riscal.channel import ChannelModelSpec, crandn, generate_channels, generate_pilot, measure_set
from riscal.estimator import (
    DEFAULT_EPS_STOP, DEFAULT_LR, DivergenceError, QnnState, calibrate, cost, forward, grad_hcas,
    grad_phi, init_state, per_iteration_flops, run_epoch, sgd_step,
)
from riscal.harness import align_and_rmse
from riscal.model import RisConfig, nominal_table, sample_deviated_table
from riscal.schedule import all_phases, build_schedule

STEP = 1e-6


def loss(h_cas, phi, h_hat):
    return cost(h_hat, forward(h_cas, phi))


def fd_grad_phi(h_cas, phi, h_hat):
    g = np.zeros(phi.size)
    for m in range(phi.size):
        e = np.zeros(phi.size)
        e[m] = STEP
        g[m] = (loss(h_cas, phi + e, h_hat) - loss(h_cas, phi - e, h_hat)) / (2 * STEP)
    return g


def fd_grad_h(h_cas, phi, h_hat):
    """Central differences w.r.t. Re and Im of every H_cas entry."""
    d_re = np.zeros(h_cas.shape)
    d_im = np.zeros(h_cas.shape)
    for idx in np.ndindex(h_cas.shape):
        for out, unit in ((d_re, 1.0), (d_im, 1j)):
            hp = h_cas.copy()
            hm = h_cas.copy()
            hp[idx] += unit * STEP
            hm[idx] -= unit * STEP
            out[idx] = (loss(hp, phi, h_hat) - loss(hm, phi, h_hat)) / (2 * STEP)
    return d_re, d_im


def rel_err(a, b):
    return np.linalg.norm(np.ravel(a - b)) / np.linalg.norm(np.ravel(b))


class TestForwardAndCost:
    def test_identity(self):
        np.testing.assert_allclose(forward(np.eye(3), np.zeros(3)), np.ones(3))

    def test_hand_example(self):
        assert abs(forward(np.array([[1, 1j]]), [0, np.pi / 2])[0]) < 1e-15

    def test_periodic(self, rng):
        h = crandn(rng, (2, 4))
        phi = rng.uniform(0, 2 * np.pi, 4)
        shifted = phi.copy()
        shifted[2] += 2 * np.pi
        np.testing.assert_allclose(forward(h, phi), forward(h, shifted), atol=1e-13)

    def test_cost(self, rng):
        v = crandn(rng, 5)
        assert cost(v, v) == 0
        assert cost(np.array([3, 4j]), np.zeros(2)) == pytest.approx(25)
        assert cost(crandn(rng, 5), crandn(rng, 5)) >= 0

    def test_mismatch(self):
        with pytest.raises(ValueError):
            forward(np.ones((2, 3)), np.zeros(2))
        with pytest.raises(ValueError):
            cost(np.ones(2), np.ones(3))
        with pytest.raises(ValueError):
            grad_phi(np.ones((2, 3)), np.zeros(3), np.ones(3))


class TestGradients:
    def test_grad_phi_hand_example(self):
        np.testing.assert_allclose(grad_phi(np.array([[1.0]]), [0.0], [1 + 1j]), [-2.0])

    def test_zero_at_perfect_fit(self, rng):
        h = crandn(rng, (3, 4))
        phi = rng.uniform(0, 6, 4)
        target = forward(h, phi)
        assert np.max(np.abs(grad_phi(h, phi, target))) < 1e-10
        assert np.max(np.abs(grad_hcas(h, phi, target))) < 1e-10

    def test_grad_h_rank_one(self, rng):
        g = grad_hcas(crandn(rng, (4, 6)), rng.uniform(0, 6, 6), crandn(rng, 4))
        assert np.linalg.matrix_rank(g) <= 1

    @pytest.mark.parametrize("seed", range(10))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        m_r, m_ris = rng.integers(1, 9, size=2)
        h = crandn(rng, (m_r, m_ris))
        phi = rng.uniform(0, 2 * np.pi, m_ris)
        h_hat = crandn(rng, m_r)
        assert rel_err(grad_phi(h, phi, h_hat), fd_grad_phi(h, phi, h_hat)) < 1e-6
        g = grad_hcas(h, phi, h_hat)
        d_re, d_im = fd_grad_h(h, phi, h_hat)
        # real derivatives are twice the real/imaginary parts of the conjugate gradient
        assert rel_err(2 * g.real, d_re) < 1e-6
        assert rel_err(2 * g.imag, d_im) < 1e-6


def _state(rng, m_r=3, m_ris=5, L=4, lr=1e-3):
    return QnnState(crandn(rng, (m_r, m_ris)), rng.uniform(0, 2 * np.pi, (m_ris, L)), lr)


class TestSgdStep:
    def test_zero_gradient_no_change(self, rng):
        s = _state(rng)
        gears = rng.integers(0, 4, 5)
        label = forward(s.h_cas_est, s.phases[np.arange(5), gears])
        new = sgd_step(s, (gears, label))
        np.testing.assert_allclose(new.h_cas_est, s.h_cas_est, atol=1e-15)
        np.testing.assert_allclose(new.phases, s.phases, atol=1e-15)

    def test_zero_lr_no_change(self, rng):
        s = _state(rng, lr=0.0)
        new = sgd_step(s, (rng.integers(0, 4, 5), crandn(rng, 3)))
        np.testing.assert_array_equal(new.h_cas_est, s.h_cas_est)
        np.testing.assert_array_equal(new.phases, s.phases)

    def test_descent(self, rng):
        for _ in range(20):
            s = _state(rng)
            gears = rng.integers(0, 4, 5)
            label = crandn(rng, 3)
            m = np.arange(5)
            before = loss(s.h_cas_est, s.phases[m, gears], label)
            new = sgd_step(s, (gears, label))
            after = loss(new.h_cas_est, new.phases[m, gears], label)
            assert after < before

    def test_only_probed_entries_change(self, rng):
        s = _state(rng, m_ris=6, L=8)
        gears = rng.integers(0, 8, 6)
        new = sgd_step(s, (gears, crandn(rng, 3)))
        changed = new.phases != s.phases
        assert changed.sum() == 6
        assert np.all(changed[np.arange(6), gears])

    def test_kernel_matches_reference_steps(self, rng):
        cfg = RisConfig(m_ris=6, bits=2, m_r=3, o_groups=3)
        sched = build_schedule(cfg, 1)
        labels = crandn(rng, (cfg.q_total, cfg.m_r))
        state = init_state(cfg, 4, lr=2e-2)
        ref = state
        ref_loss = 0.0
        for q in range(cfg.q_total):
            g = sched.gears[q]
            ref_loss += loss(ref.h_cas_est, ref.phases[np.arange(6), g], labels[q])
            ref = sgd_step(ref, (g, labels[q]))
        h = np.array(state.h_cas_est)
        ph = np.array(state.phases)
        c_ave = run_epoch(h, ph, sched.gears, labels, 2e-2)
        np.testing.assert_allclose(h, ref.h_cas_est, rtol=0, atol=1e-12)
        np.testing.assert_allclose(ph, ref.phases, rtol=0, atol=1e-12)
        assert c_ave == pytest.approx(ref_loss / cfg.q_total, rel=1e-12)


def test_stationary_at_truth(rng):
    cfg = RisConfig(m_ris=8, bits=3, m_r=4, o_groups=4)
    table = sample_deviated_table(cfg, 0.3, 1)
    h = crandn(rng, (4, 8))
    sched = build_schedule(cfg, 2)
    for phi in all_phases(sched, table):
        label = forward(h, phi)
        assert np.max(np.abs(grad_phi(h, phi, label))) < 1e-10
        assert np.max(np.abs(grad_hcas(h, phi, label))) < 1e-10


def test_global_phase_ambiguity(rng):
    cfg = RisConfig(m_ris=6, bits=2, m_r=3, o_groups=2)
    table = sample_deviated_table(cfg, 0.3, 4)
    h = crandn(rng, (3, 6))
    sched = build_schedule(cfg, 5)
    ref = table.phases[:, 0]
    h_rot = h @ np.diag(np.exp(1j * ref))
    shifted = table.phases - ref[:, None]
    for q in range(cfg.q_total):
        g = sched.gears[q]
        m = np.arange(6)
        np.testing.assert_allclose(forward(h_rot, shifted[m, g]), forward(h, table.phases[m, g]), atol=1e-12)


def _problem(cfg, seed, noise_var=None, kind="rayleigh"):
    table = sample_deviated_table(cfg, np.deg2rad(20), seed)
    ch = generate_channels(ChannelModelSpec(kind), cfg, seed + 1)
    sched = build_schedule(cfg, seed + 2)
    ms = measure_set(ch, table, sched, generate_pilot(cfg.n_pilot, seed + 3), cfg, seed + 4, noise_var=noise_var)
    return table, sched, ms


class TestCalibrate:
    def test_defaults(self):
        assert DEFAULT_LR == 5e-3
        assert DEFAULT_EPS_STOP == 1e-5

    def test_noiseless_recovery(self):
        cfg = RisConfig(m_ris=4, bits=2, m_r=4, o_groups=6)
        table, sched, ms = _problem(cfg, 10, noise_var=0.0)
        rep = calibrate(ms, sched, cfg, eps_stop=0.0, max_epochs=3000, rng_seed=1)
        assert align_and_rmse(rep.table_est, table) < 0.1
        assert rep.epochs_run >= 1
        hist = rep.c_ave_history
        assert np.all(np.isfinite(hist)) and np.all(hist >= 0)
        # non-increasing once the cost is small
        small = np.flatnonzero(hist < 1e-6)
        if small.size:
            tail = hist[small[0]:]
            assert np.all(np.diff(tail) <= 1e-12)

    def test_noise_floor(self):
        cfg = RisConfig(m_ris=8, bits=2, m_r=4, o_groups=8, snr_db=15)
        finals = []
        for seed in range(0, 60, 10):
            _, sched, ms = _problem(cfg, seed)
            finals.append(calibrate(ms, sched, cfg, rng_seed=seed).final_c_ave)
        floor = 2 * cfg.noise_var * cfg.m_r / cfg.n_pilot
        assert 0.5 * floor <= np.mean(finals) <= 1.5 * floor

    def test_stop_rules(self):
        cfg = RisConfig(m_ris=8, bits=2, m_r=4, o_groups=8, snr_db=20)
        _, sched, ms = _problem(cfg, 3)
        rel = calibrate(ms, sched, cfg, rng_seed=0)
        ab = calibrate(ms, sched, cfg, rng_seed=0, stop_rule="absolute")
        assert rel.converged and ab.converged
        h = rel.c_ave_history
        assert (h[-2] - h[-1]) / h[-2] < 1e-5
        assert all((h[k - 1] - h[k]) / h[k - 1] >= 1e-5 for k in range(1, len(h) - 1))
        assert ab.c_ave_history[-2] - ab.c_ave_history[-1] < 1e-5
        # the same initial weights give the same trajectory up to the earlier stop
        n = min(rel.epochs_run, ab.epochs_run)
        np.testing.assert_array_equal(rel.c_ave_history[:n], ab.c_ave_history[:n])

    def test_max_epochs_cap(self):
        cfg = RisConfig(m_ris=4, bits=1, m_r=2, o_groups=4)
        _, sched, ms = _problem(cfg, 0)
        rep = calibrate(ms, sched, cfg, eps_stop=-np.inf, max_epochs=7)
        assert rep.epochs_run == 7 and not rep.converged

    def test_deterministic(self):
        cfg = RisConfig(m_ris=4, bits=2, m_r=2, o_groups=4)
        _, sched, ms = _problem(cfg, 0)
        a = calibrate(ms, sched, cfg, rng_seed=3)
        b = calibrate(ms, sched, cfg, rng_seed=3)
        assert a.table_est == b.table_est
        np.testing.assert_array_equal(a.c_ave_history, b.c_ave_history)

    def test_divergence(self):
        cfg = RisConfig(m_ris=16, bits=2, m_r=4, o_groups=4)
        _, sched, ms = _problem(cfg, 0)
        with pytest.raises(DivergenceError, match="smaller learning rate"):
            calibrate(ms, sched, cfg, lr=5.0, max_epochs=200)

    def test_validation(self):
        cfg = RisConfig(m_ris=4, bits=1, m_r=2, o_groups=4)
        _, sched, ms = _problem(cfg, 0)
        with pytest.raises(ValueError):
            calibrate(ms, sched, cfg.with_(m_r=3))
        with pytest.raises(ValueError):
            calibrate(ms, sched, cfg, lr=0.0)
        with pytest.raises(ValueError):
            calibrate(ms, sched, cfg, stop_rule="sometimes")
        with pytest.raises(ValueError):
            calibrate(ms, sched, cfg, max_epochs=0)

    def test_report_table_wrapped(self):
        cfg = RisConfig(m_ris=4, bits=1, m_r=2, o_groups=4)
        _, sched, ms = _problem(cfg, 0)
        p = calibrate(ms, sched, cfg).table_est.phases
        assert np.all((p >= 0) & (p < 2 * np.pi))

    def test_initial_table_is_nominal(self):
        cfg = RisConfig(m_ris=3, bits=2, m_r=2)
        s = init_state(cfg, 0)
        np.testing.assert_array_equal(s.phases, nominal_table(cfg).phases)


class MulCounter:
    """Pure-Python gradient evaluation that counts complex multiplications."""

    def __init__(self):
        self.count = 0.0

    def mul(self, a, b):
        self.count += 1
        return a * b

    def imag_of_mul(self, a, b):
        # only the imaginary part is needed: half the work of a full product
        self.count += 0.5
        return a.real * b.imag + a.imag * b.real

    def gradients(self, h, e, r):
        m_r, m_ris = h.shape
        g_phi = []
        for m in range(m_ris):
            s = 0j
            for i in range(m_r):
                s += self.mul(h[i, m].conjugate(), r[i])
            g_phi.append(-2 * self.imag_of_mul(s, e[m].conjugate()))
        g_h = [[self.mul(-r[i], e[m].conjugate()) for m in range(m_ris)] for i in range(m_r)]
        return np.array(g_phi), np.array(g_h)


@pytest.mark.parametrize("m_r, m_ris", [(4, 16), (8, 32), (1, 1), (3, 7)])
def test_flops_match_instrumented_count(rng, m_r, m_ris):
    cfg = RisConfig(m_ris=m_ris, bits=1, m_r=m_r)
    h = crandn(rng, (m_r, m_ris))
    phi = rng.uniform(0, 6, m_ris)
    label = crandn(rng, m_r)
    e = np.exp(1j * phi)
    r = label - h @ e
    counter = MulCounter()
    g_phi, g_h = counter.gradients(h, e, r)
    np.testing.assert_allclose(g_phi, grad_phi(h, phi, label), atol=1e-12)
    np.testing.assert_allclose(g_h, grad_hcas(h, phi, label), atol=1e-12)
    assert per_iteration_flops(cfg) == counter.count


def test_flops_examples():
    assert per_iteration_flops(RisConfig(m_ris=16, bits=1, m_r=4)) == 136
    assert per_iteration_flops(RisConfig(m_ris=32, bits=1, m_r=4)) == 2 * 136
