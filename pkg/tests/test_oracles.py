import unittest

import numpy as np

from attacks import CheaterClient, CoalitionClient, DictatorClient, mutual_domination_clients, probe_then_attack
from errors import ShapeMismatchError
from model_core import QuadraticObjective
from models import CoalitionSpec, ProbeConfig, ProtocolConfig
from oracles import (
    check_betrayal,
    check_coalition,
    check_eta_estimate,
    check_mutual_domination,
    check_post_betrayal,
    check_probe,
    check_single_dictator,
    negative_control,
)
from protocol import HonestClient, run_rounds, solo_trajectory, subset_trajectory


def _quadratics(centers, scales=None):
    scales = scales or [1.0] * len(centers)
    return {cid: QuadraticObjective(c, s) for cid, (c, s) in enumerate(zip(centers, scales), start=1)}


def _honest(evs, eta, rounds, theta_0):
    clients = [HonestClient(cid, ev) for cid, ev in evs.items()]
    return run_rounds(ProtocolConfig(eta=eta, rounds=rounds, num_clients=len(evs)), clients, theta_0)


class TestSingleDictatorCheck(unittest.TestCase):
    def setUp(self):
        self.evs = _quadratics([[1.0, 0.0], [0.0, 2.0], [-1.0, -1.0], [3.0, 1.0]], [1.0, 0.5, 2.0, 1.5])
        self.theta_0 = np.array([0.2, -0.4])
        self.eta = 0.1

    def test_passes_on_attack_and_fails_on_honest(self):
        clients = [DictatorClient(2, self.evs[2], self.eta)] + [
            HonestClient(cid, ev) for cid, ev in self.evs.items() if cid != 2
        ]
        records = run_rounds(ProtocolConfig(eta=self.eta, rounds=12, num_clients=4), clients, self.theta_0)
        solo = solo_trajectory(self.evs[2], self.theta_0, self.eta, 12)
        report = check_single_dictator(records, solo, self.evs, self.eta, 2)
        self.assertTrue(report.passed, report)
        self.assertEqual(report.rounds_checked, 12)
        self.assertGreater(report.residual_inf_norm, 0.0)

        control = negative_control(
            check_single_dictator, _honest(self.evs, self.eta, 12, self.theta_0), solo, self.evs, self.eta, 2
        )
        self.assertTrue(control.checker_failed)

    def test_short_trajectory_rejected(self):
        records = _honest(self.evs, self.eta, 3, self.theta_0)
        with self.assertRaises(ShapeMismatchError):
            check_single_dictator(records, [self.theta_0] * 2, self.evs, self.eta, 1)


class TestCoalitionCheck(unittest.TestCase):
    def test_passes_on_attack_and_fails_on_honest(self):
        evs = _quadratics([[1.0], [2.0], [-3.0], [0.5], [4.0]])
        theta_0, eta = np.array([0.0]), 0.05
        spec = CoalitionSpec(members=(2, 3, 4), num_clients=5)
        clients = [
            CoalitionClient(cid, spec, ev, eta) if cid in spec.members else HonestClient(cid, ev)
            for cid, ev in evs.items()
        ]
        records = run_rounds(ProtocolConfig(eta=eta, rounds=10, num_clients=5), clients, theta_0)
        subset = subset_trajectory({k: evs[k] for k in (2, 3, 4)}, theta_0, eta, 10)
        self.assertTrue(check_coalition(records, subset, evs, eta, [2, 3, 4]).passed)
        control = negative_control(check_coalition, _honest(evs, eta, 10, theta_0), subset, evs, eta, [2, 3, 4])
        self.assertTrue(control.checker_failed)


class TestMutualDominationCheck(unittest.TestCase):
    def test_round_two_closed_form(self):
        evs = _quadratics([[1.0, 2.0], [-1.0, 0.0], [0.0, -2.0]], [1.0, 2.0, 0.5])
        theta_0, eta = np.array([0.3, 0.3]), 0.1
        config = ProtocolConfig(eta=eta, rounds=3, num_clients=3)
        records = run_rounds(config, mutual_domination_clients(evs, eta), theta_0)
        self.assertTrue(check_mutual_domination(records, evs, eta).passed)
        control = negative_control(check_mutual_domination, _honest(evs, eta, 3, theta_0), evs, eta)
        self.assertTrue(control.checker_failed)


class TestBetrayalCheck(unittest.TestCase):
    def setUp(self):
        self.a, self.b, self.c = 1.0, -2.0, 3.0
        self.evs = _quadratics([[self.a], [self.b], [self.c]])
        self.eta = 0.1
        self.theta_0 = np.array([0.5])

    def _run(self, rounds, e, window="proof"):
        cheater = CheaterClient(1, 2, 3, self.evs[1], self.eta, e, window=window)
        partner = CoalitionClient(2, CoalitionSpec(members=(1, 2), num_clients=3), self.evs[2], self.eta)
        outsider = HonestClient(3, self.evs[3])
        records = run_rounds(
            ProtocolConfig(eta=self.eta, rounds=rounds, num_clients=3), [cheater, partner, outsider], self.theta_0
        )
        return cheater, records

    def test_scalar_hand_trace_e2(self):
        a, b, c, eta = self.a, self.b, self.c, self.eta
        g1, g2, g3 = (lambda x: x - a), (lambda x: x - b), (lambda x: x - c)
        t0 = 0.5
        t1 = t0 - eta * (g1(t0) + g2(t0) + g3(t0))
        p1 = t0 - eta * (g1(t0) + g2(t0))
        acc = g1(t0) - (g1(t0) + g2(t0))
        m1 = g1(p1) - ((t0 - t1) / (2 * eta) - g1(t0))
        m2 = g2(p1) - ((t0 - t1) / (2 * eta) - g2(t0))
        t2 = t1 - eta * (m1 + m2 + g3(t1))
        p2 = p1 - eta * (g1(p1) + g2(p1))
        partner_e = g2(p2) - ((p1 - t2) / (2 * eta) - g2(p1))
        t3 = t2 - eta * (acc + partner_e + g3(t2))

        cheater, records = self._run(3, 2)
        self.assertAlmostEqual(float(records[2].theta_after[0]), t3, places=12)
        report = check_betrayal(records, cheater.cheat_log, self.evs, eta, 2, 1, 2)
        self.assertTrue(report.passed, report)

    def test_longer_run_and_aftermath(self):
        cheater, records = self._run(12, 5)
        self.assertTrue(check_betrayal(records, cheater.cheat_log, self.evs, self.eta, 5, 1, 2).passed)
        secret = solo_trajectory(self.evs[1], self.theta_0, self.eta, 12)
        self.assertTrue(check_post_betrayal(records, secret, self.evs, self.eta, 5, 1).passed)

        honest = _honest(self.evs, self.eta, 12, self.theta_0)
        self.assertTrue(negative_control(check_betrayal, honest, {}, self.evs, self.eta, 5, 1, 2).checker_failed)
        self.assertTrue(negative_control(check_post_betrayal, honest, secret, self.evs, self.eta, 5, 1).checker_failed)

    def test_pseudocode_window_closed_form(self):
        cheater, records = self._run(6, 3, window="pseudocode")
        report = check_betrayal(records, cheater.cheat_log, self.evs, self.eta, 3, 1, 2, window="pseudocode")
        self.assertTrue(report.passed, report)
        proof_form = check_betrayal(records, cheater.cheat_log, self.evs, self.eta, 3, 1, 2, window="proof")
        self.assertFalse(proof_form.passed)

    def test_tampered_log_fails(self):
        cheater, records = self._run(4, 2)
        log = cheater.cheat_log
        log["secret"][1] = log["secret"][1] + 1e-3
        self.assertFalse(check_betrayal(records, log, self.evs, self.eta, 2, 1, 2).passed)


class TestProbeCheck(unittest.TestCase):
    def test_estimated_eta_identity(self):
        evs = _quadratics([[1.0, -1.0], [2.0, 0.0], [0.0, 3.0]])
        theta_0, eta = np.zeros(2), 0.1
        prober = probe_then_attack(ProbeConfig(magnitude=1e6), 1, evs[1])
        clients = [prober, HonestClient(2, evs[2]), HonestClient(3, evs[3])]
        records = run_rounds(ProtocolConfig(eta=eta, rounds=8, num_clients=3), clients, theta_0)
        shadow = solo_trajectory(evs[1], theta_0, prober.eta_hat, 8)
        report = check_probe(records, shadow, evs, eta, prober.eta_hat, 1)
        self.assertTrue(report.passed, report)
        self.assertTrue(check_eta_estimate(theta_0, prober.magnitude, evs, eta, prober.eta_hat, 1).passed)

        plain = solo_trajectory(evs[1], theta_0, eta, 8)
        control = negative_control(check_probe, _honest(evs, eta, 8, theta_0), plain, evs, eta, eta, 1)
        self.assertTrue(control.checker_failed)


if __name__ == "__main__":
    unittest.main()
