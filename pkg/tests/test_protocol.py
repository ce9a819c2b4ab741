import unittest

import numpy as np

from errors import ProtocolError, ShapeMismatchError, StrategyError
from model_core import QuadraticObjective
from models import ProtocolConfig
from protocol import (
    BaseClient,
    HonestClient,
    Mailbox,
    PeerMessage,
    UpdateMessage,
    replay_check,
    run_rounds,
    server_step,
    solo_trajectory,
    subset_trajectory,
)


def _msg(cid, vec, round_idx=0):
    return UpdateMessage(cid, round_idx, np.asarray(vec, dtype=np.float64))


class _NaNClient(BaseClient):
    def update(self, round, theta):
        return UpdateMessage(self.client_id, round, np.full(theta.shape, np.nan))


class _WrongLengthClient(BaseClient):
    def update(self, round, theta):
        return UpdateMessage(self.client_id, round, np.zeros(theta.shape[0] + 1))


class _MutatingClient(BaseClient):
    def update(self, round, theta):
        theta[0] = 99.0
        return UpdateMessage(self.client_id, round, np.zeros_like(theta))


class TestServerStep(unittest.TestCase):
    def test_applies_sum(self):
        theta = np.array([1.0, 1.0])
        out = server_step(theta, [_msg(2, [1.0, 0.0]), _msg(1, [0.0, 2.0])], 0.5)
        self.assertTrue(np.array_equal(out, np.array([0.5, 0.0])))

    def test_zero_eta_keeps_model(self):
        theta = np.array([1.0, -3.0])
        self.assertTrue(np.array_equal(server_step(theta, [_msg(1, [5.0, 5.0])], 0.0), theta))

    def test_duplicate_update(self):
        with self.assertRaises(ProtocolError):
            server_step(np.zeros(2), [_msg(1, [1.0, 1.0]), _msg(1, [1.0, 1.0])], 0.1)

    def test_missing_update(self):
        with self.assertRaises(ProtocolError):
            server_step(np.zeros(2), [_msg(1, [1.0, 1.0])], 0.1, expected_clients=[1, 2])

    def test_length_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            server_step(np.zeros(2), [_msg(1, [1.0, 1.0, 1.0])], 0.1)


class TestRunRounds(unittest.TestCase):
    def setUp(self):
        self.objectives = {1: QuadraticObjective([0.0]), 2: QuadraticObjective([2.0])}
        self.config = ProtocolConfig(eta=0.1, rounds=5, num_clients=2)

    def test_honest_run_matches_gradient_descent_on_sum(self):
        clients = [HonestClient(cid, ev) for cid, ev in self.objectives.items()]
        records = run_rounds(self.config, clients, np.array([1.0]), metrics=self.objectives)
        self.assertEqual(len(records), 5)
        expected = subset_trajectory(self.objectives, np.array([1.0]), 0.1, 5, num_clients=3)
        for rec in records:
            self.assertTrue(np.array_equal(rec.theta_after, expected[rec.round + 1]))
            self.assertEqual([m.client_id for m in rec.per_client_metrics], [1, 2])
            self.assertIsNone(rec.per_client_metrics[0].accuracy)
        self.assertEqual(replay_check(records, 0.1), 0.0)

    def test_updates_are_in_client_order(self):
        clients = [HonestClient(2, self.objectives[2]), HonestClient(1, self.objectives[1])]
        records = run_rounds(self.config, clients, np.array([1.0]))
        self.assertEqual([u.client_id for u in records[0].updates], [1, 2])

    def test_rerun_is_bitwise_identical(self):
        def _run():
            clients = [HonestClient(cid, ev) for cid, ev in self.objectives.items()]
            return run_rounds(self.config, clients, np.array([0.3]))

        a, b = _run(), _run()
        self.assertEqual(a[-1].theta_after.tobytes(), b[-1].theta_after.tobytes())

    def test_nan_update_aborts_with_client_and_round(self):
        clients = [HonestClient(1, self.objectives[1]), _NaNClient(2)]
        with self.assertRaises(StrategyError) as ctx:
            run_rounds(self.config, clients, np.array([1.0]))
        self.assertEqual(ctx.exception.client_id, 2)
        self.assertEqual(ctx.exception.round, 0)

    def test_wrong_length_update_aborts(self):
        clients = [HonestClient(1, self.objectives[1]), _WrongLengthClient(2)]
        with self.assertRaises(StrategyError):
            run_rounds(self.config, clients, np.array([1.0]))

    def test_clients_cannot_mutate_broadcast(self):
        clients = [_MutatingClient(1), HonestClient(2, self.objectives[2])]
        with self.assertRaises(StrategyError):
            run_rounds(self.config, clients, np.array([1.0]))

    def test_client_count_must_match(self):
        with self.assertRaises(ProtocolError):
            run_rounds(self.config, [HonestClient(1, self.objectives[1])], np.array([1.0]))

    def test_replay_detects_tampering(self):
        clients = [HonestClient(cid, ev) for cid, ev in self.objectives.items()]
        records = run_rounds(self.config, clients, np.array([1.0]))
        bad = records[2].theta_after.copy()
        bad[0] += 1e-3
        records[2] = records[2].__class__(records[2].round, records[2].theta_before, records[2].updates, bad)
        self.assertGreater(replay_check(records, 0.1), 0.0)


class TestMailbox(unittest.TestCase):
    def test_rejects_undeclared_peer(self):
        box = Mailbox()
        with self.assertRaises(ProtocolError):
            box.post(PeerMessage(1, 3, 0, np.zeros(1), ""), sender_peers=(2,))


class TestTrajectories(unittest.TestCase):
    def test_zero_steps_rejected(self):
        q = QuadraticObjective([1.0])
        with self.assertRaises(ValueError):
            solo_trajectory(q, np.array([4.0]), 0.1, 0)
        with self.assertRaises(ValueError):
            subset_trajectory({1: q, 2: q}, np.array([4.0]), 0.1, 0)

    def test_one_step_has_two_points(self):
        out = solo_trajectory(QuadraticObjective([1.0]), np.array([4.0]), 0.1, 1)
        self.assertEqual(len(out), 2)
        self.assertEqual(float(out[0][0]), 4.0)

    def test_constant_objective_stays_put(self):
        out = solo_trajectory(QuadraticObjective([2.0], scale=0.0), np.array([2.0]), 0.5, 10)
        self.assertTrue(all(float(x[0]) == 2.0 for x in out))

    def test_identical_members_scale_the_step(self):
        q = QuadraticObjective([1.0, -1.0])
        pair = subset_trajectory({1: q, 2: q}, np.zeros(2), 0.05, 6)
        solo = solo_trajectory(q, np.zeros(2), 0.1, 6)
        for a, b in zip(pair, solo):
            self.assertTrue(np.allclose(a, b, rtol=0, atol=1e-15))

    def test_coalition_must_be_smaller_than_federation(self):
        q = QuadraticObjective([0.0])
        with self.assertRaises(ProtocolError):
            subset_trajectory({1: q, 2: q}, np.zeros(1), 0.1, 1, num_clients=2)
        with self.assertRaises(ProtocolError):
            subset_trajectory({1: q}, np.zeros(1), 0.1, 1)


if __name__ == "__main__":
    unittest.main()
