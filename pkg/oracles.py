"""Closed-form checks on recorded runs.

The checkers rebuild every expected model from the evaluators and the
recorded global models only. They never look at attack state, so a wrong
attack cannot make its own check pass.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Mapping, Sequence

import numpy as np

from errors import ProtocolError, ShapeMismatchError
from model_core import Objective, ParamVector, inf_norm, sum_of
from models import EquivalenceReport, NegativeControl
from protocol import RoundRecord


DEFAULT_TOLERANCE = 1e-9


def _grad(ev: Objective, theta: ParamVector) -> ParamVector:
    return ev.evaluate(theta)[1]


def _grad_sum(evaluators: Mapping[int, Objective], ids: Iterable[int], theta: ParamVector) -> ParamVector:
    return sum_of(((n, _grad(evaluators[n], theta)) for n in sorted(ids)), size=theta.shape[0])


def _report(
    claim_id: str,
    lhs: ParamVector,
    rhs: ParamVector,
    diff: float,
    residual: float,
    tolerance: float,
    rounds: int,
    detail: str = "",
) -> EquivalenceReport:
    return EquivalenceReport(
        claim_id=claim_id,
        lhs_norm=inf_norm(lhs),
        rhs_norm=inf_norm(rhs),
        diff_inf_norm=diff,
        residual_inf_norm=residual,
        tolerance=tolerance,
        passed=bool(diff <= tolerance),
        rounds_checked=rounds,
        detail=detail,
    )


def _nan_max(a: float, b: float) -> float:
    return float("nan") if np.isnan(a) or np.isnan(b) else max(a, b)


def _require(records: Sequence[RoundRecord], trajectory: Sequence[ParamVector]) -> int:
    if not records:
        raise ProtocolError("no rounds recorded")
    last = records[-1].round
    if len(trajectory) < last + 2:
        raise ShapeMismatchError(f"trajectory length mismatch: need {last + 2} points, got {len(trajectory)}")
    return last


def _tracks_shadow(
    claim_id: str,
    records: Sequence[RoundRecord],
    shadow: Sequence[ParamVector],
    evaluators: Mapping[int, Objective],
    eta: float,
    insiders: Sequence[int],
    tolerance: float,
) -> EquivalenceReport:
    """theta_{t+1} = shadow_t - eta*(insiders at shadow_t + outsiders at theta_t), every round,
    and theta* = shadow_{L+1} - eta*(outsiders at theta_L) for the last round L."""
    last = _require(records, shadow)
    outsiders = [n for n in sorted(evaluators) if n not in set(insiders)]
    worst = 0.0
    for rec in records:
        t = rec.round
        inside = _grad_sum(evaluators, insiders, shadow[t])
        outside = _grad_sum(evaluators, outsiders, rec.theta_before)
        rhs = shadow[t] - eta * (inside + outside)
        worst = _nan_max(worst, inf_norm(rec.theta_after - rhs))

    final = records[-1]
    residual = eta * _grad_sum(evaluators, outsiders, final.theta_before)
    rhs_final = shadow[last + 1] - residual
    worst = _nan_max(worst, inf_norm(final.theta_after - rhs_final))
    return _report(
        claim_id, final.theta_after, rhs_final, worst, inf_norm(residual), tolerance, len(records),
        detail=f"insiders={list(insiders)}",
    )


def check_single_dictator(
    records: Sequence[RoundRecord],
    solo: Sequence[ParamVector],
    evaluators: Mapping[int, Objective],
    eta: float,
    dictator_id: int,
    tolerance: float = DEFAULT_TOLERANCE,
) -> EquivalenceReport:
    return _tracks_shadow("single_dictator", records, solo, evaluators, eta, [dictator_id], tolerance)


def check_coalition(
    records: Sequence[RoundRecord],
    subset: Sequence[ParamVector],
    evaluators: Mapping[int, Objective],
    eta: float,
    members: Sequence[int],
    tolerance: float = DEFAULT_TOLERANCE,
) -> EquivalenceReport:
    return _tracks_shadow("coalition", records, subset, evaluators, eta, sorted(members), tolerance)


def check_mutual_domination_round2(
    theta_0: ParamVector,
    theta_2: ParamVector,
    evaluators: Mapping[int, Objective],
    eta: float,
    tolerance: float = DEFAULT_TOLERANCE,
) -> EquivalenceReport:
    """theta_2 = theta_0 + eta*(N-2)*sum g_n(theta_0) - eta*sum g_n(theta_0 - eta*g_n(theta_0))."""
    n = len(evaluators)
    g0 = {cid: _grad(ev, theta_0) for cid, ev in evaluators.items()}
    first = sum_of(g0)
    second = sum_of((cid, _grad(evaluators[cid], theta_0 - eta * g)) for cid, g in g0.items())
    rhs = theta_0 + eta * (n - 2) * first - eta * second
    return _report("mutual_domination_round2", theta_2, rhs, inf_norm(theta_2 - rhs), 0.0, tolerance, 2)


def check_mutual_domination(
    records: Sequence[RoundRecord],
    evaluators: Mapping[int, Objective],
    eta: float,
    tolerance: float = DEFAULT_TOLERANCE,
) -> EquivalenceReport:
    if len(records) < 2:
        raise ProtocolError("mutual domination check needs at least two rounds")
    return check_mutual_domination_round2(records[0].theta_before, records[1].theta_after, evaluators, eta, tolerance)


def check_betrayal(
    records: Sequence[RoundRecord],
    cheat_log: Mapping[str, Sequence[ParamVector]],
    evaluators: Mapping[int, Objective],
    eta: float,
    betrayal_round: int,
    cheater_id: int,
    partner_id: int,
    *,
    window: str = "proof",
    tolerance: float = DEFAULT_TOLERANCE,
) -> EquivalenceReport:
    """Closed form of theta_{E+1} right after the cheater defects.

    proof window:       theta_hat^1_{E-1} - eta*(S_{E-1} + R_{E-1}) - eta*(M^2_E + R_E)
    pseudocode window:  theta_hat^1_E - eta*g_2(theta_0) - eta*(R_{E-1} + M^2_E + R_E)

    S_t sums the coalition gradients at theta_hat^P_t, R_t the outsiders'
    gradients at theta_t, and M^2_E is the partner's recorded update. Both
    shadows are recomputed here; disagreement with the cheater's own log
    counts against the check.
    """
    e = betrayal_round
    if e < 2:
        raise ProtocolError(f"betrayal round must be >= 2, got {e}")
    if len(records) < e + 1:
        raise ProtocolError(f"need {e + 1} rounds, got {len(records)}")
    pair = sorted((cheater_id, partner_id))
    outsiders = [n for n in sorted(evaluators) if n not in pair]
    theta_0 = records[0].theta_before

    coalition_traj = [theta_0.copy()]
    secret_traj = [theta_0.copy()]
    for _ in range(e + 1):
        cur = coalition_traj[-1]
        coalition_traj.append(cur - eta * _grad_sum(evaluators, pair, cur))
        secret_traj.append(secret_traj[-1] - eta * _grad(evaluators[cheater_id], secret_traj[-1]))

    log_gap = 0.0
    for key, ours in (("coalition", coalition_traj), ("secret", secret_traj)):
        logged = cheat_log.get(key, ())
        for t in range(min(len(logged), e + 1)):
            log_gap = _nan_max(log_gap, inf_norm(np.asarray(logged[t]) - ours[t]))

    theta_em1 = records[e - 1].theta_before
    theta_e = records[e].theta_before
    theta_e1 = records[e].theta_after
    m2 = records[e].update_of(partner_id)
    r_prev = _grad_sum(evaluators, outsiders, theta_em1)
    r_e = _grad_sum(evaluators, outsiders, theta_e)
    if window == "proof":
        s_prev = _grad_sum(evaluators, pair, coalition_traj[e - 1])
        rhs = secret_traj[e - 1] - eta * (s_prev + r_prev) - eta * (m2 + r_e)
    elif window == "pseudocode":
        rhs = secret_traj[e] - eta * _grad(evaluators[partner_id], theta_0) - eta * (r_prev + m2 + r_e)
    else:
        raise ProtocolError(f"unknown betrayal window: {window}")

    diff = _nan_max(inf_norm(theta_e1 - rhs), log_gap)
    return _report(
        "betrayal", theta_e1, rhs, diff, inf_norm(eta * (r_prev + r_e)), tolerance, 1,
        detail=f"E={e} window={window} log_gap={log_gap:.3g}",
    )


def check_post_betrayal(
    records: Sequence[RoundRecord],
    secret: Sequence[ParamVector],
    evaluators: Mapping[int, Objective],
    eta: float,
    betrayal_round: int,
    cheater_id: int,
    tolerance: float = DEFAULT_TOLERANCE,
) -> EquivalenceReport:
    """For t > E: theta_{t+1} = theta_hat^1_t - eta*(g_1(theta_hat^1_t) + other recorded updates)."""
    _require(records, secret)
    later = [rec for rec in records if rec.round >= betrayal_round + 1]
    if not later:
        raise ProtocolError(f"no rounds after betrayal round {betrayal_round}")
    worst = 0.0
    rhs = later[-1].theta_after
    for rec in later:
        t = rec.round
        others = sum_of(
            ((m.client_id, m.update) for m in rec.updates if m.client_id != cheater_id),
            size=rec.theta_before.shape[0],
        )
        rhs = secret[t] - eta * (_grad(evaluators[cheater_id], secret[t]) + others)
        worst = _nan_max(worst, inf_norm(rec.theta_after - rhs))
    return _report("post_betrayal", later[-1].theta_after, rhs, worst, 0.0, tolerance, len(later))


def check_probe(
    records: Sequence[RoundRecord],
    shadow: Sequence[ParamVector],
    evaluators: Mapping[int, Objective],
    eta: float,
    eta_hat: float,
    prober_id: int,
    tolerance: float = DEFAULT_TOLERANCE,
) -> EquivalenceReport:
    """Tracking identity for a dictator that attacks with an estimated step size.

    For t >= 1, with q = eta/eta_hat and shadow built with eta_hat:
        theta_{t+1} = q*shadow_t + (1-q)*theta_t - eta*(g_m(shadow_t) + others at theta_t)
    The residual is the largest (1-q)*(theta_t - shadow_t), i.e. how far the
    eta error pushes the model off the plain tracking identity.
    """
    _require(records, shadow)
    if not eta_hat > 0:
        raise ProtocolError(f"eta_hat must be positive, got {eta_hat}")
    q = eta / eta_hat
    outsiders = [n for n in sorted(evaluators) if n != prober_id]
    worst, perturbation = 0.0, 0.0
    later = [rec for rec in records if rec.round >= 1]
    if not later:
        raise ProtocolError("probe check needs at least two rounds")
    rhs = later[-1].theta_after
    for rec in later:
        t, theta_t = rec.round, rec.theta_before
        steer = _grad(evaluators[prober_id], shadow[t]) + _grad_sum(evaluators, outsiders, theta_t)
        rhs = q * shadow[t] + (1.0 - q) * theta_t - eta * steer
        worst = _nan_max(worst, inf_norm(rec.theta_after - rhs))
        perturbation = max(perturbation, abs(1.0 - q) * inf_norm(theta_t - shadow[t]))
    return _report(
        "probe_then_attack", later[-1].theta_after, rhs, worst, perturbation, tolerance, len(later),
        detail=f"eta_hat={eta_hat!r}",
    )


def check_eta_estimate(
    theta_0: ParamVector,
    magnitude: float,
    evaluators: Mapping[int, Objective],
    eta: float,
    eta_hat: float,
    prober_id: int,
) -> EquivalenceReport:
    """|eta_hat - eta| stays within eta * max|others at theta_0| / B."""
    others = _grad_sum(evaluators, [n for n in sorted(evaluators) if n != prober_id], theta_0)
    bound = eta * inf_norm(others) / abs(magnitude)
    # a few ulps of slack for the median and the division
    tolerance = bound + 8.0 * np.finfo(np.float64).eps * eta
    lhs = np.array([eta_hat])
    rhs = np.array([eta])
    return _report(
        "eta_estimate", lhs, rhs, abs(eta_hat - eta), bound, float(tolerance), 1,
        detail=f"relative_error={abs(eta_hat - eta) / eta:.3g}",
    )


def negative_control(
    checker: Callable[..., EquivalenceReport],
    honest_records: Sequence[RoundRecord],
    *args: object,
    **kwargs: object,
) -> NegativeControl:
    """Runs a checker on honest-only records; a sound checker must fail there."""
    report = checker(honest_records, *args, **kwargs)
    return NegativeControl(
        claim_id=report.claim_id,
        diff_inf_norm=report.diff_inf_norm,
        tolerance=report.tolerance,
        checker_failed=not report.passed,
    )
