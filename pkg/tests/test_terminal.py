import numpy as np
import pytest
import scipy.linalg
from numpy.testing import assert_allclose

from so3mpc.errors import NoFeasibleLevel, NotStabilizable, OutOfChart
from so3mpc.lgvi import SpacecraftState, lgvi_step
from so3mpc.so3 import exp_so3
from so3mpc.terminal import (
    Linearization,
    QuadraticCostData,
    StageWeights,
    TerminalDesign,
    attitude_stage_cost,
    build_cost_data,
    build_linearization,
    calibrate_level,
    coordinates,
    dare_residual,
    default_weights,
    design_terminal,
    evaluate_level,
    lqr_gain,
    skew_trace_identity_check,
    solve_dare,
    tilde_transform,
    _ellipsoid_samples,
)

from conftest import H_REF, J_REF, TORQUE_BOUND_REF

GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0


class TestTildeTransform:
    def test_identity(self):
        assert_allclose(tilde_transform(np.eye(3)), 2.0 * np.eye(3))

    def test_twice_identity(self):
        assert_allclose(tilde_transform(2.0 * np.eye(3)), 4.0 * np.eye(3))

    def test_diagonal(self):
        # trace = 6, so 6 I - diag(1, 2, 3).
        assert_allclose(tilde_transform(np.diag([1.0, 2.0, 3.0])), np.diag([5.0, 4.0, 3.0]))

    def test_linear(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = rng.standard_normal((3, 3))
            a = a + a.T
            b = rng.standard_normal((3, 3))
            b = b + b.T
            al, be = rng.standard_normal(2)
            assert_allclose(
                tilde_transform(al * a + be * b),
                al * tilde_transform(a) + be * tilde_transform(b),
                atol=1e-12,
            )

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            tilde_transform(np.array([[0.0, 1.0, 0], [0, 0, 0], [0, 0, 0]]))


class TestSkewTraceIdentity:
    def test_unit_axis_case(self):
        # hat(e3)^T hat(e3) = diag(1, 1, 0); trace against 2I gives 4.
        assert skew_trace_identity_check([0, 0, 1], [0, 0, 1], 2.0 * np.eye(3)) <= 1e-12

    def test_zero_vector(self):
        assert skew_trace_identity_check([0, 0, 0], [1, 2, 3], np.eye(3)) == 0.0

    def test_random(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            a, b = rng.standard_normal(3), rng.standard_normal(3)
            r = rng.standard_normal((3, 3))
            r = r + r.T
            assert skew_trace_identity_check(a, b, r) <= 1e-12


class TestLinearization:
    def test_blocks(self):
        lin = build_linearization(0.1)
        assert_allclose(lin.A[:3, 3:], 0.1 * np.eye(3))
        assert_allclose(lin.A[:3, :3], np.eye(3))
        assert_allclose(lin.A[3:, 3:], np.eye(3))
        assert_allclose(lin.A[3:, :3], np.zeros((3, 3)))
        assert_allclose(lin.B[:3], np.zeros((3, 3)))

    def test_unit_step_identity_coupling(self):
        lin = build_linearization(1.0)
        assert_allclose(lin.B, np.vstack([np.zeros((3, 3)), np.eye(3)]))

    def test_inertia_coupling_is_exact_jacobian(self):
        lin = build_linearization(H_REF, J_REF)
        tilde = np.trace(J_REF) * np.eye(3) - J_REF
        assert_allclose(lin.B[3:], H_REF * np.linalg.inv(tilde))

    def test_controllability(self):
        for h in (0.01, 0.1, 1.0, 7.3):
            for inertia in (None, J_REF):
                lin = build_linearization(h, inertia)
                ctrb = np.hstack([np.linalg.matrix_power(lin.A, k) @ lin.B for k in range(6)])
                assert np.linalg.matrix_rank(ctrb) == 6

    def test_rejects_nonpositive_step(self):
        with pytest.raises(ValueError):
            build_linearization(0.0)


class TestCostData:
    def test_reference_values(self, ref_weights):
        cost = build_cost_data(ref_weights)
        assert_allclose(cost.Q[:3, :3], 20.0 * np.eye(3))
        assert_allclose(cost.Q[3:, 3:], 10.0 * np.diag([2.7, 2.5, 2.2]))
        assert_allclose(cost.Q[:3, 3:], np.zeros((3, 3)))
        assert_allclose(cost.N_cross, np.zeros((6, 3)))
        assert_allclose(cost.R_dare, 40.0 * np.eye(3))

    def test_decay_boundary_rejected(self):
        with pytest.raises(ValueError):
            StageWeights(np.eye(3), np.eye(3), np.eye(3), 1.0)
        with pytest.raises(ValueError):
            StageWeights(np.eye(3), np.eye(3), np.eye(3), 0.0)

    def test_tilde_of_spd_weights_stays_spd(self):
        # Each eigenvalue of the tilde transform is the sum of the other two
        # eigenvalues of the input, so SPD weights always produce SPD blocks.
        rng = np.random.default_rng(3)
        for _ in range(50):
            eigs = rng.uniform(0.01, 10.0, 3)
            basis, _ = np.linalg.qr(rng.standard_normal((3, 3)))
            spd = basis @ np.diag(eigs) @ basis.T
            cost = build_cost_data(StageWeights(spd, np.eye(3), np.eye(3), 0.1))
            assert np.linalg.eigvalsh(cost.Q)[0] > 0.0
            assert np.linalg.eigvalsh(cost.R_dare)[0] > 0.0


class TestDare:
    def test_scalar_golden_ratio(self):
        lin = Linearization(np.array([[1.0]]), np.array([[1.0]]))
        cost = QuadraticCostData(np.array([[1.0]]), np.zeros((1, 1)), np.array([[1.0]]))
        p = solve_dare(lin, cost)
        assert p[0, 0] == pytest.approx(GOLDEN, abs=1e-10)

    def test_scalar_gain(self):
        lin = Linearization(np.array([[1.0]]), np.array([[1.0]]))
        cost = QuadraticCostData(np.array([[1.0]]), np.zeros((1, 1)), np.array([[1.0]]))
        p = solve_dare(lin, cost)
        k = lqr_gain(p, lin, cost)
        assert k[0, 0] == pytest.approx(p[0, 0] / (p[0, 0] + 1.0), abs=1e-12)
        assert abs(1.0 - k[0, 0]) < 1.0

    def test_homogeneity(self, ref_weights):
        lin = build_linearization(H_REF, J_REF)
        cost = build_cost_data(ref_weights)
        p1 = solve_dare(lin, cost)
        scaled = QuadraticCostData(3.0 * cost.Q, cost.N_cross, 3.0 * cost.R_dare)
        p3 = solve_dare(lin, scaled)
        assert_allclose(p3, 3.0 * p1, rtol=1e-9)

    def test_reference_design_residual_and_stability(self, ref_weights):
        lin = build_linearization(H_REF, J_REF)
        cost = build_cost_data(ref_weights)
        p = solve_dare(lin, cost)
        assert dare_residual(p, lin, cost) <= 1e-8
        k = lqr_gain(p, lin, cost)
        rho = np.max(np.abs(np.linalg.eigvals(lin.A - lin.B @ k)))
        assert rho < 1.0

    def test_matches_scipy(self, ref_weights):
        lin = build_linearization(H_REF, J_REF)
        cost = build_cost_data(ref_weights)
        p = solve_dare(lin, cost)
        p_ref = scipy.linalg.solve_discrete_are(lin.A, lin.B, cost.Q, cost.R_dare)
        assert_allclose(p, p_ref, rtol=1e-8, atol=1e-8)

    def test_gain_reproduces_residual_identity(self, ref_weights):
        lin = build_linearization(H_REF, J_REF)
        cost = build_cost_data(ref_weights)
        p = solve_dare(lin, cost)
        k = lqr_gain(p, lin, cost)
        a_cl = lin.A - lin.B @ k
        # P = A_cl^T P A_cl + Q + K^T R K is the completed-square form.
        rebuilt = a_cl.T @ p @ a_cl + cost.Q + k.T @ cost.R_dare @ k
        assert np.linalg.norm(rebuilt - p) <= 1e-8

    def test_zero_state_zero_control(self, ref_design):
        xi = np.zeros(6)
        assert_allclose(-(ref_design.K @ xi), np.zeros(3))

    def test_not_stabilizable(self):
        lin = Linearization(np.eye(2), np.zeros((2, 1)))
        cost = QuadraticCostData(np.eye(2), np.zeros((2, 1)), np.eye(1))
        with pytest.raises(NotStabilizable):
            solve_dare(lin, cost)


class TestTerminalCostAndLaw:
    def test_zero_at_equilibrium(self, ref_design):
        state = SpacecraftState.identity()
        assert ref_design.terminal_cost(state) == 0.0
        assert_allclose(ref_design.local_law(state), np.zeros(3))

    def test_positive_away_from_equilibrium(self, ref_design):
        rng = np.random.default_rng(2)
        for _ in range(100):
            xi = 0.5 * rng.standard_normal(6)
            state = SpacecraftState(exp_so3(xi[:3]), exp_so3(H_REF * xi[3:]))
            if np.linalg.norm(xi) < 1e-12:
                continue
            assert ref_design.terminal_cost(state) > 0.0

    def test_out_of_chart(self, ref_design):
        state = SpacecraftState(exp_so3([0, 0, np.pi]), np.eye(3))
        with pytest.raises(OutOfChart):
            ref_design.local_law(state)

    def test_branch_cut_excluded_from_terminal_set(self, ref_design):
        # The calibration ceiling keeps the level below min-eig(P) pi^2, so
        # 180-degree attitudes can never satisfy the terminal constraint and
        # the log's sign ambiguity never reaches the local law.
        assert ref_design.c < np.linalg.eigvalsh(ref_design.P)[0] * np.pi**2
        rng = np.random.default_rng(21)
        for _ in range(20):
            axis = rng.standard_normal(3)
            axis /= np.linalg.norm(axis)
            state = SpacecraftState(exp_so3(np.pi * axis), np.eye(3))
            assert ref_design.terminal_cost(state) > ref_design.c

    def test_linear_consistency_of_one_step(self, ref_design):
        # One integrator step under the local law matches the design model to
        # second order in the state.
        lin = build_linearization(H_REF, J_REF)
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(200):
            xi = rng.standard_normal(6)
            xi *= 1e-4 * rng.uniform(0, 1) / np.linalg.norm(xi)
            state = SpacecraftState(exp_so3(xi[:3]), exp_so3(H_REF * xi[3:]))
            chart = coordinates(state, H_REF)
            tau = ref_design.local_law(state)
            nxt = lgvi_step(state, tau, H_REF, J_REF)
            predicted = lin.A @ chart + lin.B @ tau
            worst = max(worst, np.linalg.norm(coordinates(nxt, H_REF) - predicted))
        assert worst <= 1e-6


class TestCalibration:
    def test_reference_level_positive_and_certified(self, ref_design):
        assert ref_design.c > 0.0
        assert ref_design.certification.n_samples == 1000
        assert ref_design.certification.max_violation <= 1e-10

    def test_fresh_samples_certify(self, ref_design, ref_weights):
        rng = np.random.default_rng(99)
        samples = _ellipsoid_samples(ref_design.P, 500, rng)
        margins = evaluate_level(
            ref_design.P, ref_design.K, ref_weights, H_REF, J_REF,
            TORQUE_BOUND_REF, ref_design.c, samples,
        )
        assert margins["passed"]

    def test_tiny_torque_bound_shrinks_level(self, ref_design, ref_weights):
        level_small, _ = calibrate_level(
            ref_design.P, ref_design.K, ref_weights, H_REF, J_REF,
            torque_bound=1e-3, n_samples=200, seed=0,
        )
        assert level_small < ref_design.c

    def test_zero_torque_bound_infeasible(self, ref_design, ref_weights):
        with pytest.raises(NoFeasibleLevel):
            calibrate_level(
                ref_design.P, ref_design.K, ref_weights, H_REF, J_REF,
                torque_bound=0.0, n_samples=200, seed=0,
            )

    def test_nested_levels(self, ref_design, ref_weights):
        # Conditions passing at the calibrated level also pass at half of it.
        rng = np.random.default_rng(7)
        samples = _ellipsoid_samples(ref_design.P, 300, rng)
        for level in (ref_design.c, ref_design.c / 2.0):
            margins = evaluate_level(
                ref_design.P, ref_design.K, ref_weights, H_REF, J_REF,
                TORQUE_BOUND_REF, level, samples,
            )
            assert margins["passed"]

    def test_terminal_cost_dominates_stage_cost(self, ref_design, ref_weights):
        # F(x) >= r L(x, 0) on chart samples, for the ratio computed from the
        # smallest terminal eigenvalue and the largest quadratic stage block:
        # the trace-form stage cost is below its quadratic majorant, so
        # r = min eig(P) / max eig(blockdiag of tilde weights / 2) works.
        q_att = tilde_transform(ref_weights.attitude)
        q_rate = tilde_transform(ref_weights.rate)
        stage_block = 0.5 * max(
            np.linalg.eigvalsh(q_att)[-1], np.linalg.eigvalsh(q_rate)[-1]
        )
        ratio = np.linalg.eigvalsh(ref_design.P)[0] / stage_block
        assert ratio > 0.0
        rng = np.random.default_rng(11)
        samples = _ellipsoid_samples(ref_design.P, 200, rng)
        for xi in np.sqrt(ref_design.c) * samples:
            state = SpacecraftState(exp_so3(xi[:3]), exp_so3(H_REF * xi[3:]))
            value = ref_design.terminal_cost(state)
            stage_free = attitude_stage_cost(state, np.zeros(3), ref_weights, H_REF)
            assert value >= ratio * stage_free - 1e-9


class TestDesignSerialization:
    def test_roundtrip(self, ref_design, tmp_path):
        path = tmp_path / "design.json"
        ref_design.save(path)
        loaded = TerminalDesign.load(path)
        assert_allclose(loaded.P, ref_design.P)
        assert_allclose(loaded.K, ref_design.K)
        assert loaded.c == ref_design.c
        assert loaded.h == ref_design.h
        assert_allclose(loaded.inertia, ref_design.inertia)
        assert loaded.certification == ref_design.certification

    def test_schema_fields(self, ref_design):
        data = ref_design.to_json_dict()
        assert set(data) == {"h", "J", "Q_g", "Q_f", "R", "lambda", "P", "K", "c", "certification"}
        assert len(data["P"]) == 36
        assert len(data["K"]) == 18
        assert set(data["certification"]) == {"n_samples", "max_violation"}

    def test_deterministic_bytes(self, ref_weights, tmp_path):
        a = design_terminal(J_REF, H_REF, ref_weights, torque_bound=100.0, seed=0)
        b = design_terminal(J_REF, H_REF, ref_weights, torque_bound=100.0, seed=0)
        pa, pb = tmp_path / "a.json", tmp_path / "b.json"
        a.save(pa)
        b.save(pb)
        assert pa.read_bytes() == pb.read_bytes()
