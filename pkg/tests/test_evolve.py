import math

import numpy as np
import pytest
from scipy.linalg import expm

from nonlocalrd.equilibria import solve_phi
from nonlocalrd.evolve import (
    IntegratorConfig,
    bernoulli_blowup_time,
    envelope_U,
    evolve_nonlinear,
    fit_growth_constant,
    kaplan_witness,
    linear_semigroup_apply,
    lyapunov_E,
    monotone_config,
    picard_solve,
    supersolution_ode,
)
from nonlocalrd.kernel import assemble_kernel, build_operator, compute_h0
from nonlocalrd.reaction import CallableReaction, LogisticReaction, truncate
from nonlocalrd.space import build_interval
from nonlocalrd.spectral import cw_bounds


def unit_op(n=32, c=1.0, h=None):
    s = build_interval(0, 1, n)
    k = assemble_kernel(s, "constant", c=c)
    if h is None:
        h = np.zeros(n)
    return s, k, build_operator(k, h)


def logistic_flow_closed_form(t, c0, alpha):
    """Constant-in-space flow of ċ = αc - c³ via the v = c⁻² substitution."""
    v0 = c0 ** -2.0
    v = (v0 - 1.0 / alpha) * math.exp(-2.0 * alpha * t) + 1.0 / alpha
    return v ** -0.5


ZERO_REACTION = dict(kind="globally_lipschitz", lip=0.0)


def zero_reaction(n):
    return CallableReaction(lambda s: np.zeros_like(s), lambda s: np.zeros_like(s),
                            n_nodes=n, **ZERO_REACTION)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            IntegratorConfig(scheme="heun")
        with pytest.raises(ValueError):
            IntegratorConfig(dt=0.0)
        with pytest.raises(ValueError):
            IntegratorConfig(store_every=0)

    def test_dt_must_divide_t_end(self):
        _, _, op = unit_op(8)
        cfg = IntegratorConfig(scheme="rk4", dt=0.3, t_end=1.0)
        with pytest.raises(ValueError, match="divide"):
            evolve_nonlinear(op, zero_reaction(8), np.ones(8), cfg)

    def test_euler_dt_bound_enforced(self):
        _, _, op = unit_op(8, h=np.full(8, 3.0))
        cfg = IntegratorConfig(scheme="euler_op", dt=0.5, t_end=1.0, beta=0.0)
        with pytest.raises(ValueError, match="euler_op step"):
            evolve_nonlinear(op, zero_reaction(8), np.ones(8), cfg)


class TestLinearSemigroup:
    def test_time_zero_is_identity(self):
        _, _, op = unit_op(16, h=np.linspace(0, 1, 16))
        u0 = np.sin(np.arange(16.0))
        np.testing.assert_allclose(linear_semigroup_apply(op, 0.0, u0), u0, atol=1e-15)

    def test_threshold_potential_preserves_constants(self):
        s, k, _ = unit_op(16)
        op = build_operator(k, compute_h0(k))
        for t in (0.5, 2.0, -1.0):
            np.testing.assert_allclose(linear_semigroup_apply(op, t, np.full(16, 2.5)),
                                       2.5, atol=1e-12)

    def test_decoupled_scalar_decay(self):
        _, _, op = unit_op(8, c=0.0, h=np.ones(8))
        out = linear_semigroup_apply(op, 1.0, np.ones(8))
        np.testing.assert_allclose(out, math.exp(-1.0), atol=1e-14)

    def test_group_property_backward_forward(self):
        _, _, op = unit_op(12, h=np.linspace(0.2, 1.0, 12))
        rng = np.random.default_rng(0)
        u0 = rng.standard_normal(12)
        back = linear_semigroup_apply(op, -0.7, u0)
        np.testing.assert_allclose(linear_semigroup_apply(op, 0.7, back), u0, atol=1e-10)

    def test_positivity_forward(self):
        s, k, op = unit_op(16, h=np.full(16, 0.5))
        rng = np.random.default_rng(1)
        u0 = np.abs(rng.standard_normal(16))
        for t in (0.1, 1.0, 3.0):
            assert np.min(linear_semigroup_apply(op, t, u0)) >= -1e-12

    def test_rejects_nonfinite_time(self):
        _, _, op = unit_op(4)
        with pytest.raises(ValueError):
            linear_semigroup_apply(op, np.inf, np.ones(4))


class TestEvolveNonlinear:
    def test_zero_reaction_reduces_to_linear(self):
        _, _, op = unit_op(24, h=np.linspace(0.0, 1.0, 24))
        rng = np.random.default_rng(2)
        u0 = rng.standard_normal(24)
        cfg = IntegratorConfig(scheme="rk4", dt=1e-3, t_end=1.0, store_every=250)
        tr = evolve_nonlinear(op, zero_reaction(24), u0, cfg)
        for t, u in zip(tr.times, tr.states):
            np.testing.assert_allclose(u, linear_semigroup_apply(op, t, u0), atol=1e-6)

    def test_logistic_reaches_stable_root(self):
        _, _, op = unit_op(32)
        f = LogisticReaction(g=0.0, n=2.0, m=1.0, rho=3.0, n_nodes=32)
        cfg = IntegratorConfig(scheme="rk4", dt=1e-2, t_end=20.0, store_every=2000)
        tr = evolve_nonlinear(op, f, np.full(32, 0.1), cfg)
        np.testing.assert_allclose(tr.final(), math.sqrt(3.0), atol=1e-4)
        # and the whole constant flow tracks the scalar closed form
        assert tr.final()[0] == pytest.approx(logistic_flow_closed_form(20.0, 0.1, 3.0),
                                              abs=1e-8)

    def test_cubic_blowup_is_flagged(self):
        _, _, op = unit_op(16)
        f = CallableReaction(lambda s: s ** 3, lambda s: 3 * s ** 2, n_nodes=16)
        cfg = IntegratorConfig(scheme="rk4", dt=1e-4, t_end=0.1)
        tr = evolve_nonlinear(op, f, np.full(16, 10.0), cfg)
        assert tr.blowup
        assert tr.metadata["blowup_time"] < 0.1
        assert np.all(np.isfinite(tr.states))

    def test_euler_op_requires_usable_truncation(self):
        _, _, op = unit_op(8)
        f = CallableReaction(lambda s: s ** 3, lambda s: 3 * s ** 2, n_nodes=8)
        cfg = IntegratorConfig(scheme="euler_op", dt=1e-3, t_end=1.0)
        with pytest.raises(ValueError, match="truncation"):
            evolve_nonlinear(op, f, np.full(8, 10.0), cfg)

    def test_schemes_agree_on_smooth_run(self):
        s = build_interval(0, 1, 32)
        k = assemble_kernel(s, "gaussian", sigma=0.3)
        op = build_operator(k, 0.3 + 0.2 * np.sin(2 * np.pi * s.x))
        f = LogisticReaction(g=0.05, n=0.3, m=0.5, rho=3.0, n_nodes=32)
        u0 = 0.3 + 0.1 * np.sin(np.pi * s.x)
        finals = {}
        for scheme in ("euler_op", "rk4", "vcf_exact_linear"):
            cfg = IntegratorConfig(scheme=scheme, dt=1e-3, t_end=1.0, store_every=10 ** 6)
            finals[scheme] = evolve_nonlinear(op, f, u0, cfg).final()
        assert np.max(np.abs(finals["euler_op"] - finals["rk4"])) <= 1e-4
        assert np.max(np.abs(finals["vcf_exact_linear"] - finals["rk4"])) <= 1e-4
        # first-order schemes halve their deviation when dt halves
        cfg = IntegratorConfig(scheme="euler_op", dt=5e-4, t_end=1.0, store_every=10 ** 6)
        half = evolve_nonlinear(op, f, u0, cfg).final()
        ratio = np.max(np.abs(finals["euler_op"] - finals["rk4"])) \
            / np.max(np.abs(half - finals["rk4"]))
        assert ratio == pytest.approx(2.0, abs=0.2)

    def test_order_preservation_is_exact(self):
        s, _, op = unit_op(48, h=None)
        rng = np.random.default_rng(3)
        f1 = LogisticReaction(g=0.2, n=1.0, m=0.8, rho=3.0, n_nodes=48)
        from nonlocalrd.reaction import add_bump
        f0 = add_bump(f1, np.full(48, 0.3))
        u1 = rng.uniform(-1, 1, size=48)
        u0 = u1 + rng.uniform(0, 1, size=48)
        cfg = monotone_config(op, f0, np.full(48, 2.0), 1.0)
        tr0 = evolve_nonlinear(op, f0, u0, cfg)
        tr1 = evolve_nonlinear(op, f1, u1, cfg)
        assert np.min(tr0.states - tr1.states) >= -1e-12

    def test_positivity_is_exact(self):
        s, _, op = unit_op(48, h=None)
        rng = np.random.default_rng(4)
        f = LogisticReaction(g=0.1, n=1.0, m=0.8, rho=3.0, n_nodes=48)
        u0 = np.abs(rng.standard_normal(48))
        cfg = monotone_config(op, f, u0, 1.0)
        tr = evolve_nonlinear(op, f, u0, cfg)
        assert np.min(tr.states) >= -1e-12

    def test_strict_positivity_spreads_in_one_step(self):
        # positivity radius beyond the diameter: a single bump lights up
        # every node after one order-preserving step
        s = build_interval(0, 1, 40)
        k = assemble_kernel(s, "tophat", R=2.0, J0=1.0)
        op = build_operator(k, np.zeros(40))
        f = LogisticReaction(g=0.0, n=1.0, m=1.0, rho=3.0, n_nodes=40)
        u0 = np.zeros(40)
        u0[7] = 0.8
        cfg = monotone_config(op, f, np.ones(40), 0.5)
        tr = evolve_nonlinear(op, f, u0, cfg)
        assert np.min(tr.states[1:]) > 0.0

    def test_growth_bound_constant_is_modest_for_linear_flow(self):
        s, _, op = unit_op(32, h=None)
        cfg = IntegratorConfig(scheme="rk4", dt=1e-2, t_end=2.0, store_every=10)
        tr = evolve_nonlinear(op, zero_reaction(32), np.ones(32), cfg)
        m = fit_growth_constant(op, tr)
        assert m <= 1.0 + 1e-9  # started on the principal eigenfunction

    def test_growth_bound_fit_is_stable_in_time(self):
        # the fitted constant must not keep growing with the horizon
        s = build_interval(0, 1, 24)
        k = assemble_kernel(s, "tophat", R=0.4, J0=1.5)
        op = build_operator(k, 0.5 + 0.4 * (s.x > 0.5))
        rng = np.random.default_rng(6)
        u0 = rng.standard_normal(24)
        fits = []
        for t_end in (2.0, 4.0, 8.0):
            cfg = IntegratorConfig(scheme="rk4", dt=1e-2, t_end=t_end, store_every=10)
            fits.append(fit_growth_constant(op, evolve_nonlinear(
                op, zero_reaction(24), u0, cfg)))
        assert fits[2] <= fits[1] * (1 + 1e-9) + 1e-9
        assert all(np.isfinite(fits))

    def test_lower_subsolution_stays_below_linear_flow(self):
        s, k, op = unit_op(64, h=None)
        rng = np.random.default_rng(5)
        phi = rng.uniform(0.5, 1.5, size=64)
        lam_tilde = cw_bounds(op, phi).lower - 0.05
        for t in (0.5, 1.0, 2.0):
            flow = linear_semigroup_apply(op, t, phi)
            assert np.all(math.exp(lam_tilde * t) * phi <= flow + 1e-9)


class TestPicard:
    def test_zero_reaction_converges_immediately(self):
        _, _, op = unit_op(16, h=np.full(16, 0.5))
        res = picard_solve(op, zero_reaction(16), np.ones(16), tau=0.2)
        assert res.contraction_factor < 1.0
        assert res.distances[0] > 0  # first correction away from the constant guess
        assert res.distances[-1] <= 1e-12

    def test_constant_source_matches_closed_form(self):
        n = 16
        _, _, op = unit_op(n, h=np.full(n, 0.5))
        dvec = np.full(n, 0.7)
        f = CallableReaction(lambda s: np.broadcast_to(dvec[:, None], s.shape).copy(),
                             lambda s: np.zeros_like(s), n_nodes=n,
                             kind="globally_lipschitz", lip=0.0)
        tau = 0.3
        res = picard_solve(op, f, np.ones(n), tau=tau, n_sub=64)
        aug = np.zeros((2 * n, 2 * n))
        aug[:n, :n] = op.amat * tau
        aug[:n, n:] = np.eye(n) * tau
        big = expm(aug)
        closed = big[:n, :n] @ np.ones(n) + big[:n, n:] @ dvec
        np.testing.assert_allclose(res.states[-1], closed, atol=1e-8)

    def test_truncated_logistic_contracts_geometrically(self):
        n = 24
        _, _, op = unit_op(n)
        f = truncate(LogisticReaction(g=0.0, n=2.0, m=1.0, rho=3.0, n_nodes=n), 3.0)
        res = picard_solve(op, f, np.full(n, 0.5), tau=0.01)
        q = res.contraction_factor
        assert q < 1.0
        d = [x for x in res.distances if x > 1e-13]
        for a, b in zip(d, d[1:]):
            assert b <= q * a + 1e-13

    def test_matches_rk4_on_the_window(self):
        n = 24
        _, _, op = unit_op(n)
        f = truncate(LogisticReaction(g=0.1, n=1.0, m=1.0, rho=3.0, n_nodes=n), 3.0)
        tau = 0.01
        res = picard_solve(op, f, np.full(n, 0.5), tau=tau, n_sub=50)
        cfg = IntegratorConfig(scheme="rk4", dt=tau / 50, t_end=tau, store_every=50)
        tr = evolve_nonlinear(op, f, np.full(n, 0.5), cfg)
        np.testing.assert_allclose(res.states[-1], tr.final(), atol=1e-6)

    def test_rejects_large_tau(self):
        _, _, op = unit_op(16)
        f = truncate(LogisticReaction(g=0.0, n=2.0, m=1.0, rho=3.0, n_nodes=16), 3.0)
        with pytest.raises(ValueError, match="contraction"):
            picard_solve(op, f, np.full(16, 0.5), tau=5.0)

    def test_rejects_locally_lipschitz_reaction(self):
        _, _, op = unit_op(8)
        f = LogisticReaction(g=0.0, n=1.0, m=1.0, rho=3.0, n_nodes=8)
        with pytest.raises(ValueError):
            picard_solve(op, f, np.ones(8), tau=0.1)


class TestSupersolutionOde:
    def test_growing_closed_form(self):
        z = supersolution_ode(1.0, 1.0, 1.0, 2.0)
        for t in (0.0, 0.5, 1.7):
            assert z(t) == pytest.approx(2.0 * math.exp(t) - 1.0, rel=1e-14)
        assert z.level == pytest.approx(z(2.0))

    def test_linear_case(self):
        z = supersolution_ode(0.0, 2.0, 0.0, 3.0)
        assert z(1.5) == pytest.approx(3.0)
        assert z.level == pytest.approx(6.0)

    def test_decaying_case_keeps_initial_level(self):
        z = supersolution_ode(-1.0, 1.0, 5.0, 4.0)
        assert z(1.0) == pytest.approx(4.0 * math.exp(-1.0) + 1.0, rel=1e-14)
        assert z.level == pytest.approx(5.0)  # sup over [0, 4] sits at t = 0


class TestEnvelope:
    def test_fixed_point_initial_datum(self):
        s, k, _ = unit_op(32)
        op_c = build_operator(k, np.full(32, 2.0))  # K - 2I, i.e. C = -2
        times = [0.0, 0.5, 1.0, 3.0]
        out = envelope_U(op_c, np.ones(32), np.ones(32), times)
        np.testing.assert_allclose(out, 1.0, atol=1e-10)

    def test_decay_to_phi_and_oracle(self):
        s, k, _ = unit_op(32)
        op_c = build_operator(k, np.full(32, 2.0))
        times = np.linspace(0, 4, 9)
        out = envelope_U(op_c, np.ones(32), np.full(32, 3.0), times)
        np.testing.assert_allclose(out[0], 3.0, atol=1e-12)
        assert np.max(np.abs(out[-1] - 1.0)) <= 2.0 * math.exp(-4.0) + 1e-9  # gap decays like e^{-t}
        # independent oracle: fine rk4 on U' = (K + C)U + D
        u = np.full(32, 3.0)
        dt = 1e-4
        dvec = np.ones(32)
        for step in range(int(round(0.5 / dt))):
            k1 = op_c.amat @ u + dvec
            k2 = op_c.amat @ (u + 0.5 * dt * k1) + dvec
            k3 = op_c.amat @ (u + 0.5 * dt * k2) + dvec
            k4 = op_c.amat @ (u + dt * k3) + dvec
            u = u + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        np.testing.assert_allclose(out[1], u, atol=1e-6)

    def test_zero_datum_stays_nonnegative(self):
        s, k, _ = unit_op(32)
        op_c = build_operator(k, np.full(32, 2.0))
        out = envelope_U(op_c, np.ones(32), np.zeros(32), np.linspace(0, 5, 11))
        assert np.min(out) >= -1e-10
        np.testing.assert_allclose(out[-1], solve_phi(k, -2.0, np.ones(32)), atol=1e-2)

    def test_spectral_precondition_enforced(self):
        s, k, _ = unit_op(16)
        op_c = build_operator(k, np.zeros(16))  # K alone has positive bound
        with pytest.raises(ValueError, match="negative spectral bound"):
            envelope_U(op_c, np.ones(16), np.ones(16), [0.0, 1.0])


class TestLyapunov:
    def test_equilibrium_continuum_has_constant_energy(self):
        # with J≡1 on [0,1] and f(u) = -u every constant is an equilibrium,
        # so the energy must not distinguish them
        s, k, _ = unit_op(32)
        f = CallableReaction(lambda s_: -s_, lambda s_: -np.ones_like(s_),
                             n_nodes=32, kind="globally_lipschitz", lip=1.0)
        for c in (0.0, 0.7, 2.0):
            assert lyapunov_E(k, f, np.full(32, c)) == pytest.approx(0.0, abs=1e-12)

    def test_zero_state_zero_energy(self):
        s, k, _ = unit_op(16)
        f = LogisticReaction(g=0.3, n=1.0, m=1.0, rho=3.0, n_nodes=16)
        assert lyapunov_E(k, f, np.zeros(16)) == pytest.approx(0.0, abs=1e-14)

    def test_descent_along_rk4_trajectories(self):
        s, k, op = unit_op(32)
        f = LogisticReaction(g=0.0, n=2.0, m=1.0, rho=3.0, n_nodes=32)
        for c0 in (0.1, 1.0, 5.0, 1.9):
            cfg = IntegratorConfig(scheme="rk4", dt=1e-2, t_end=6.0, store_every=5)
            tr = evolve_nonlinear(op, f, np.full(32, c0), cfg)
            energies = [lyapunov_E(k, f, u) for u in tr.states]
            assert max(np.diff(energies)) <= 1e-8

    def test_rejects_asymmetric_kernel(self):
        s = build_interval(0, 1, 4)
        jmat = np.triu(np.ones((4, 4)))
        k = assemble_kernel(s, "table", jmat=jmat)
        f = LogisticReaction(g=0.0, n=1.0, m=1.0, rho=2.0, n_nodes=4)
        with pytest.raises(ValueError):
            lyapunov_E(k, f, np.ones(4))


class TestKaplan:
    def test_zero_trajectory_projects_to_zero(self):
        s, k, op = unit_op(16)
        cfg = IntegratorConfig(scheme="rk4", dt=1e-2, t_end=0.5)
        tr = evolve_nonlinear(op, zero_reaction(16), np.zeros(16), cfg)
        wit = kaplan_witness(k, np.zeros(16), 3.0, tr)
        np.testing.assert_allclose(wit.z, 0.0, atol=1e-15)

    def test_linear_flow_projection_grows_at_lambda(self):
        s, k, op = unit_op(16)
        cfg = IntegratorConfig(scheme="rk4", dt=1e-3, t_end=1.0, store_every=1000)
        tr = evolve_nonlinear(op, zero_reaction(16), np.ones(16), cfg)
        wit = kaplan_witness(k, np.zeros(16), 3.0, tr)
        assert wit.lam == pytest.approx(1.0, abs=1e-10)
        assert wit.z[-1] == pytest.approx(math.e * wit.z[0], abs=1e-6)

    def test_blowup_dominates_scalar_ode(self):
        s, k, op = unit_op(16)
        f = CallableReaction(lambda s_: s_ ** 3, lambda s_: 3 * s_ ** 2, n_nodes=16)
        cfg = IntegratorConfig(scheme="rk4", dt=1e-4, t_end=0.1)
        tr = evolve_nonlinear(op, f, np.full(16, 10.0), cfg)
        wit = kaplan_witness(k, np.zeros(16), 3.0, tr)
        assert wit.dominated
        assert wit.blowup_time_estimate == pytest.approx(math.log(1.01) / 2.0, rel=1e-12)


def test_bernoulli_blowup_time_cases():
    # a = 0: t* = z0^{1-ρ}/(ρ-1)
    assert bernoulli_blowup_time(0.0, 3.0, 10.0) == pytest.approx(0.005, rel=1e-12)
    # decaying linear part with small datum: no blow-up
    assert bernoulli_blowup_time(-10.0, 3.0, 0.5) is None
    # decaying linear part with large datum still explodes
    assert bernoulli_blowup_time(-1.0, 3.0, 10.0) is not None
