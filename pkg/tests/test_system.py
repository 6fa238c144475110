import numpy as np
import pytest

from hindsight.system import (
    LinearModel,
    PolytopicConstraints,
    QuadraticCost,
    h_of_w,
    rollout,
    stack,
    stack_vec,
    stacked_prediction,
    toeplitz_blocks,
    unstack_vec,
)

from conftest import JET_A, JET_B, random_cost, random_model


def scalar_model(a=1.0, b=1.0, e=1.0):
    return LinearModel([[a]], [[b]], [[e]])


def scalar_cost(qx=1.0, qu=1.0, qf=None):
    return QuadraticCost([[qx]], [[qu]], [[qx if qf is None else qf]])


class TestStack:
    def test_toeplitz_scalar(self):
        data = stack(scalar_model(1.0, 1.0), scalar_cost(), PolytopicConstraints.empty(1, 1), N=2)
        np.testing.assert_allclose(data.Bbold, [[1.0, 0.0], [1.0, 1.0]])

    def test_state_powers(self):
        data = stack(scalar_model(2.0, 1.0), scalar_cost(), PolytopicConstraints.empty(1, 1), N=3)
        np.testing.assert_allclose(data.Abold, [[2.0], [4.0], [8.0]])

    def test_jet_off_diagonal_block(self, jet_stacked):
        # second block row, first block column of the input Toeplitz is A @ B
        block = jet_stacked.Bbold[6:12, 0:2]
        np.testing.assert_allclose(block, JET_A @ JET_B, atol=1e-12)

    def test_cost_block_structure(self, jet_stacked, jet_cost):
        N, n_x = jet_stacked.N, 6
        for k in range(N - 1):
            blk = jet_stacked.Qxbold[k * n_x:(k + 1) * n_x, k * n_x:(k + 1) * n_x]
            np.testing.assert_allclose(blk, jet_cost.Qx)
        np.testing.assert_allclose(jet_stacked.Qxbold[-n_x:, -n_x:], jet_cost.Qf)
        # off-diagonal blocks vanish
        off = jet_stacked.Qxbold.copy()
        for k in range(N):
            off[k * n_x:(k + 1) * n_x, k * n_x:(k + 1) * n_x] = 0.0
        assert np.abs(off).max() == 0.0
        assert np.linalg.eigvalsh(jet_stacked.Qubold).min() > 0

    def test_horizon_one_uses_terminal_cost(self):
        data = stack(scalar_model(), scalar_cost(qx=1.0, qf=7.0), PolytopicConstraints.empty(1, 1), N=1)
        np.testing.assert_allclose(data.Qxbold, [[7.0]])

    def test_rejects_bad_horizon(self, jet_model, jet_cost, jet_cons):
        with pytest.raises(ValueError):
            stack(jet_model, jet_cost, jet_cons, N=0)


class TestRollout:
    def test_all_zero(self):
        model = scalar_model()
        states = rollout(model, [0.0], np.zeros((4, 1)), np.zeros((4, 1)))
        np.testing.assert_allclose(states, np.zeros((4, 1)))

    def test_accumulation(self):
        model = scalar_model(1.0, 1.0, 1.0)
        states = rollout(model, [1.0], [[1.0], [1.0]], [[0.0], [0.0]])
        np.testing.assert_allclose(states.ravel(), [2.0, 3.0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            rollout(scalar_model(), [0.0], np.zeros((3, 1)), np.zeros((2, 1)))


class TestStackedPrediction:
    def test_zero_inputs_give_free_response(self, jet_stacked):
        rng = np.random.default_rng(0)
        x = rng.normal(size=6)
        pred = stacked_prediction(jet_stacked, x, np.zeros(40), np.zeros(40))
        np.testing.assert_allclose(pred, jet_stacked.Abold @ x, atol=1e-12)

    def test_pure_disturbance_response(self, jet_stacked):
        rng = np.random.default_rng(1)
        w = rng.normal(size=40)
        pred = stacked_prediction(jet_stacked, np.zeros(6), np.zeros(40), w)
        np.testing.assert_allclose(pred, jet_stacked.Ebold @ w, atol=1e-12)

    def test_matches_rollout_on_random_instances(self):
        # stacking equivalence over 200 random draws
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(200):
            n_x = int(rng.integers(1, 7))
            n_u = int(rng.integers(1, 4))
            n_w = int(rng.integers(1, min(n_x, 3) + 1))
            N = int(rng.integers(1, 21))
            model = random_model(rng, n_x, n_u, n_w)
            cost = random_cost(rng, n_x, n_u)
            data = stack(model, cost, PolytopicConstraints.empty(n_x, n_u), N)
            x0 = rng.normal(size=n_x)
            useq = rng.normal(size=(N, n_u))
            wseq = rng.normal(size=(N, n_w))
            direct = rollout(model, x0, useq, wseq)
            stacked = stacked_prediction(data, x0, stack_vec(useq), stack_vec(wseq))
            worst = max(worst, np.abs(unstack_vec(stacked, n_x) - direct).max())
        assert worst <= 1e-9

    def test_dimension_errors(self, jet_stacked):
        with pytest.raises(ValueError):
            stacked_prediction(jet_stacked, np.zeros(6), np.zeros(39), np.zeros(40))
        with pytest.raises(ValueError):
            stacked_prediction(jet_stacked, np.zeros(6), np.zeros(40), np.zeros(39))


class TestHofW:
    def test_zero_disturbance(self, jet_stacked):
        h = h_of_w(jet_stacked, np.zeros(40))
        np.testing.assert_allclose(h, np.concatenate([jet_stacked.hxbold, jet_stacked.hubold]))

    def test_single_state_substitution(self):
        model = scalar_model(0.0, 1.0, 1.0)
        cons = PolytopicConstraints(Gx=[[1.0]], hx=[1.0], Gu=[[1.0]], hu=[5.0])
        data = stack(model, scalar_cost(), cons, N=1)
        w = 0.3
        np.testing.assert_allclose(h_of_w(data, [w]), [1.0 - w, 5.0])

    def test_matches_rowwise_evaluation(self, jet_stacked):
        rng = np.random.default_rng(3)
        w = rng.normal(size=40)
        h = h_of_w(jet_stacked, w)
        gxe = jet_stacked.Gxbold @ jet_stacked.Ebold
        naive = [jet_stacked.hxbold[i] - gxe[i] @ w for i in range(gxe.shape[0])]
        naive += list(jet_stacked.hubold)
        np.testing.assert_allclose(h, naive, atol=1e-12)


class TestConstraintEquivalence:
    def test_stacked_iff_per_step(self, jet_model, jet_cost, jet_cons):
        # u feasible per-step along the rollout  <=>  F x + G u <= h(w)
        rng = np.random.default_rng(9)
        data = stack(jet_model, jet_cost, jet_cons, N=5)
        for _ in range(50):
            x0 = rng.normal(size=6) * 0.5
            useq = rng.normal(size=(5, 2)) * 2.5
            wseq = rng.normal(size=(5, 2)) * 0.3
            states = rollout(jet_model, x0, useq, wseq)
            per_step = all(
                (jet_cons.Gx @ s <= jet_cons.hx + 1e-12).all() for s in states
            ) and all((jet_cons.Gu @ u <= jet_cons.hu + 1e-12).all() for u in useq)
            stacked_ok = (
                data.F @ x0 + data.G @ stack_vec(useq) <= h_of_w(data, stack_vec(wseq)) + 1e-12
            ).all()
            assert per_step == stacked_ok


class TestValidation:
    def test_rank_deficient_E_rejected(self):
        with pytest.raises(ValueError):
            LinearModel(np.eye(2), np.ones((2, 1)), np.array([[1.0, 1.0], [1.0, 1.0]]))

    def test_indefinite_Qu_rejected(self):
        with pytest.raises(ValueError):
            QuadraticCost(np.eye(2), np.diag([1.0, 0.0]), np.eye(2))

    def test_indefinite_Qx_rejected(self):
        with pytest.raises(ValueError):
            QuadraticCost(np.diag([1.0, -0.5]), np.eye(2), np.eye(2))

    def test_toeplitz_shape(self):
        T = toeplitz_blocks(np.eye(2) * 2, np.ones((2, 1)), 3)
        assert T.shape == (6, 3)
        np.testing.assert_allclose(T[4:6, 0], [4.0, 4.0])
