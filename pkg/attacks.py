"""Client strategies that steer the global model.

DictatorClient
    Keeps a shadow copy of plain gradient descent on its own loss and sends
    an update that cancels everything the other clients did last round, so
    the global model tracks its solo trajectory up to one round of others'
    gradients.

CoalitionClient
    Same idea for a group: members share gradients each round, advance a
    common shadow with their sum, and split the correction P ways.

CheaterClient
    Plays coalition member until the betrayal round E, secretly running its
    own solo shadow and accumulating the gap between the two. At round E it
    sends the accumulated gap, which lands the global model on its solo
    trajectory. Afterwards it behaves like a dictator on that trajectory
    while still feeding its partner gradients so the partner keeps its shadow.

ProbingDictatorClient
    Dictator that does not know eta: it sends a huge constant update at
    round 0, reads eta back from the model change, then attacks.
"""

from __future__ import annotations

import hashlib
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from errors import ProtocolError, ShadowDesyncError, ShapeMismatchError
from logger import get_logger
from model_core import Objective, ParamVector, as_param_vector, sum_of
from models import CoalitionSpec, DictatorRole, ProbeConfig, ScenarioConfig
from protocol import BaseClient, PeerMessage, UpdateMessage


_LOG = get_logger()

BetrayalWindow = Literal["proof", "pseudocode"]


@dataclass(frozen=True)
class ShadowState:
    current: ParamVector
    previous: ParamVector | None
    kind: Literal["solo", "coalition"]
    step: int

    @classmethod
    def start(cls, theta_0: ParamVector, kind: Literal["solo", "coalition"]) -> "ShadowState":
        return cls(current=as_param_vector(theta_0).copy(), previous=None, kind=kind, step=0)

    def advance(self, step_grad: ParamVector, eta: float) -> "ShadowState":
        return ShadowState(self.current - eta * step_grad, self.current, self.kind, self.step + 1)

    def digest(self) -> str:
        return hashlib.sha256(self.current.tobytes()).hexdigest()


def _check_eta(eta: float) -> None:
    if not eta > 0:
        raise ProtocolError(f"eta must be positive, got {eta}")


def _check_step(shadow: ShadowState, round: int, theta_t: ParamVector) -> None:
    if shadow.step != round:
        raise ProtocolError(f"round gap: shadow is at step {shadow.step}, round is {round}")
    if shadow.current.shape != theta_t.shape:
        raise ShapeMismatchError(f"shadow length {shadow.current.shape[0]} vs model length {theta_t.shape[0]}")
    if round == 0 and not np.array_equal(shadow.current, theta_t):
        raise ProtocolError("shadow must start at theta_0")
    if round > 0 and shadow.previous is None:
        raise ProtocolError("shadow has no previous point")


def dictator_update(
    m: int,
    round: int,
    theta_t: ParamVector,
    shadow: ShadowState,
    ev_m: Objective,
    eta: float,
) -> tuple[UpdateMessage, ShadowState]:
    _check_eta(eta)
    _check_step(shadow, round, theta_t)
    _, g_cur = ev_m.evaluate(shadow.current)
    if round == 0:
        update = g_cur
    else:
        assert shadow.previous is not None
        _, g_prev = ev_m.evaluate(shadow.previous)
        update = g_cur - ((shadow.previous - theta_t) / eta - g_prev)
    return UpdateMessage(m, round, update), shadow.advance(g_cur, eta)


def coalition_update(
    k: int,
    coalition: CoalitionSpec,
    round: int,
    theta_t: ParamVector,
    shadow: ShadowState,
    ev_k: Objective,
    eta: float,
) -> tuple[UpdateMessage, ParamVector]:
    """Crafted update plus the gradient to share with the other members.

    The shadow is advanced separately once every member's share is in.
    """
    if k not in coalition.members:
        raise ProtocolError(f"client {k} is not a member of {coalition.members}")
    _check_eta(eta)
    _check_step(shadow, round, theta_t)
    _, g_cur = ev_k.evaluate(shadow.current)
    if round == 0:
        update = g_cur
    else:
        assert shadow.previous is not None
        _, g_prev = ev_k.evaluate(shadow.previous)
        update = g_cur - ((shadow.previous - theta_t) / (coalition.size * eta) - g_prev)
    return UpdateMessage(k, round, update), g_cur


def settle_coalition_shadow(
    shadow: ShadowState,
    shares: Mapping[int, ParamVector],
    coalition: CoalitionSpec,
    eta: float,
) -> ShadowState:
    missing = sorted(set(coalition.members) - set(shares))
    if missing:
        raise ProtocolError(f"missing peer gradient from client(s) {missing}")
    extra = sorted(set(shares) - set(coalition.members))
    if extra:
        raise ProtocolError(f"gradient from non-member(s) {extra}")
    return shadow.advance(sum_of(shares), eta)


def _check_peer_messages(
    me: int, round: int, messages: Sequence[PeerMessage], peers: tuple[int, ...], digest: str
) -> dict[int, ParamVector]:
    shares: dict[int, ParamVector] = {}
    for pm in messages:
        if pm.round != round:
            raise ProtocolError(f"client {me} got a round {pm.round} message in round {round}")
        if pm.sender not in peers or pm.sender in shares:
            raise ProtocolError(f"client {me} got an unexpected message from client {pm.sender}")
        if pm.shadow_digest != digest:
            raise ShadowDesyncError(f"client {me} and client {pm.sender} disagree on the coalition shadow")
        shares[pm.sender] = pm.payload
    missing = sorted(set(peers) - set(shares))
    if missing:
        raise ProtocolError(f"missing peer gradient from client(s) {missing}")
    return shares


class DictatorClient(BaseClient):
    def __init__(self, client_id: int, evaluator: Objective, eta: float, *, eta_source: str = "true") -> None:
        super().__init__(client_id)
        _check_eta(eta)
        self.evaluator = evaluator
        self.eta = eta
        self.eta_source = eta_source
        self.shadow: ShadowState | None = None
        self.shadow_log: list[ParamVector] = []

    def update(self, round: int, theta: ParamVector) -> UpdateMessage:
        if round == 0:
            self.shadow = ShadowState.start(theta, "solo")
            self.shadow_log = [self.shadow.current]
        if self.shadow is None:
            raise ProtocolError("dictator joined after round 0")
        msg, self.shadow = dictator_update(self.client_id, round, theta, self.shadow, self.evaluator, self.eta)
        self.shadow_log.append(self.shadow.current)
        return msg


class CoalitionClient(BaseClient):
    def __init__(self, client_id: int, coalition: CoalitionSpec, evaluator: Objective, eta: float) -> None:
        super().__init__(client_id)
        if client_id not in coalition.members:
            raise ProtocolError(f"client {client_id} is not a member of {coalition.members}")
        _check_eta(eta)
        self.coalition = coalition
        self.peers = tuple(m for m in coalition.members if m != client_id)
        self.evaluator = evaluator
        self.eta = eta
        self.eta_source = "true"
        self.shadow: ShadowState | None = None
        self.shadow_log: list[ParamVector] = []
        self._own_share: ParamVector | None = None

    def update(self, round: int, theta: ParamVector) -> UpdateMessage:
        if round == 0:
            self.shadow = ShadowState.start(theta, "coalition")
            self.shadow_log = [self.shadow.current]
        if self.shadow is None:
            raise ProtocolError("coalition member joined after round 0")
        msg, share = coalition_update(
            self.client_id, self.coalition, round, theta, self.shadow, self.evaluator, self.eta
        )
        self._own_share = share
        digest = self.shadow.digest()
        for peer in self.peers:
            self._outbox.append(PeerMessage(self.client_id, peer, round, share, digest))
        return msg

    def receive(self, round: int, messages: Sequence[PeerMessage]) -> None:
        if self.shadow is None or self._own_share is None:
            raise ProtocolError(f"client {self.client_id} received messages before sending an update")
        shares = _check_peer_messages(self.client_id, round, messages, self.peers, self.shadow.digest())
        shares[self.client_id] = self._own_share
        self.shadow = settle_coalition_shadow(self.shadow, shares, self.coalition, self.eta)
        self.shadow_log.append(self.shadow.current)
        self._own_share = None


@dataclass(frozen=True)
class CheatState:
    coalition_shadow: ShadowState
    secret_shadow: ShadowState
    accumulator: ParamVector
    betrayal_round: int
    window: BetrayalWindow = "proof"
    accumulated_rounds: tuple[int, ...] = ()
    pending_share: ParamVector | None = field(default=None, repr=False)
    pending_secret_grad: ParamVector | None = field(default=None, repr=False)

    @classmethod
    def start(cls, theta_0: ParamVector, betrayal_round: int, window: BetrayalWindow = "proof") -> "CheatState":
        if betrayal_round < 2:
            raise ProtocolError(f"betrayal round must be >= 2, got {betrayal_round}")
        if window not in ("proof", "pseudocode"):
            raise ProtocolError(f"unknown betrayal window: {window}")
        return cls(
            coalition_shadow=ShadowState.start(theta_0, "coalition"),
            secret_shadow=ShadowState.start(theta_0, "solo"),
            accumulator=np.zeros_like(as_param_vector(theta_0)),
            betrayal_round=betrayal_round,
            window=window,
        )

    def accumulates(self, round: int) -> bool:
        # "proof" makes theta_{E+1} land exactly on the closed form around theta_hat^1_{E-1}
        if self.window == "proof":
            return 0 <= round <= self.betrayal_round - 2
        return 1 <= round <= self.betrayal_round - 1


def cheater_update(
    cid: int,
    coalition: CoalitionSpec,
    state: CheatState,
    round: int,
    theta_t: ParamVector,
    ev_1: Objective,
    eta: float,
) -> tuple[UpdateMessage, ParamVector, CheatState]:
    """Update to send, gradient to share with the partner, and the next state."""
    cover_msg, share = coalition_update(cid, coalition, round, theta_t, state.coalition_shadow, ev_1, eta)
    _, g_secret = ev_1.evaluate(state.secret_shadow.current)
    if round < state.betrayal_round:
        msg = cover_msg
        secret = state.secret_shadow.advance(g_secret, eta)
    elif round == state.betrayal_round:
        msg = UpdateMessage(cid, round, state.accumulator.copy())
        secret = state.secret_shadow.advance(g_secret, eta)
        _LOG.info("betrayal round=%s client=%s accumulated=%s", round, cid, list(state.accumulated_rounds))
    else:
        msg, secret = dictator_update(cid, round, theta_t, state.secret_shadow, ev_1, eta)
    return msg, share, replace(state, secret_shadow=secret, pending_share=share, pending_secret_grad=g_secret)


def cheater_settle(
    cid: int,
    coalition: CoalitionSpec,
    state: CheatState,
    round: int,
    partner_shares: Mapping[int, ParamVector],
    eta: float,
) -> CheatState:
    """Advance the coalition shadow and, inside the window, accumulate the gap."""
    if state.pending_share is None or state.pending_secret_grad is None:
        raise ProtocolError(f"client {cid} settled round {round} without an update")
    shares = dict(partner_shares)
    shares[cid] = state.pending_share
    coalition_sum = sum_of(shares)
    coalition_shadow = settle_coalition_shadow(state.coalition_shadow, shares, coalition, eta)
    accumulator, rounds = state.accumulator, state.accumulated_rounds
    if state.accumulates(round):
        accumulator = accumulator + (state.pending_secret_grad - coalition_sum)
        rounds = rounds + (round,)
    return replace(
        state,
        coalition_shadow=coalition_shadow,
        accumulator=accumulator,
        accumulated_rounds=rounds,
        pending_share=None,
        pending_secret_grad=None,
    )


class CheaterClient(BaseClient):
    def __init__(
        self,
        client_id: int,
        partner: int,
        num_clients: int,
        evaluator: Objective,
        eta: float,
        betrayal_round: int,
        *,
        window: BetrayalWindow = "proof",
    ) -> None:
        super().__init__(client_id)
        _check_eta(eta)
        if betrayal_round < 2:
            raise ProtocolError(f"betrayal round must be >= 2, got {betrayal_round}")
        self.coalition = CoalitionSpec(members=(client_id, partner), num_clients=num_clients)
        self.partner = partner
        self.peers = (partner,)
        self.evaluator = evaluator
        self.eta = eta
        self.eta_source = "true"
        self.betrayal_round = betrayal_round
        self.window: BetrayalWindow = window
        self.state: CheatState | None = None
        self.coalition_log: list[ParamVector] = []
        self.secret_log: list[ParamVector] = []

    def update(self, round: int, theta: ParamVector) -> UpdateMessage:
        if round == 0:
            self.state = CheatState.start(theta, self.betrayal_round, self.window)
            self.coalition_log = [self.state.coalition_shadow.current]
            self.secret_log = [self.state.secret_shadow.current]
        if self.state is None:
            raise ProtocolError("cheater joined after round 0")
        digest = self.state.coalition_shadow.digest()
        msg, share, self.state = cheater_update(
            self.client_id, self.coalition, self.state, round, theta, self.evaluator, self.eta
        )
        self.secret_log.append(self.state.secret_shadow.current)
        self._outbox.append(PeerMessage(self.client_id, self.partner, round, share, digest))
        return msg

    def receive(self, round: int, messages: Sequence[PeerMessage]) -> None:
        if self.state is None:
            raise ProtocolError(f"client {self.client_id} received messages before sending an update")
        shares = _check_peer_messages(
            self.client_id, round, messages, self.peers, self.state.coalition_shadow.digest()
        )
        self.state = cheater_settle(self.client_id, self.coalition, self.state, round, shares, self.eta)
        self.coalition_log.append(self.state.coalition_shadow.current)

    @property
    def cheat_log(self) -> dict[str, list[ParamVector]]:
        return {"coalition": list(self.coalition_log), "secret": list(self.secret_log)}


def estimate_eta(theta_t: ParamVector, theta_t1: ParamVector, probe: ProbeConfig | float) -> float:
    """Median over coordinates of (theta_t - theta_{t+1}) / B."""
    return estimate_eta_with_bound(theta_t, theta_t1, probe)[0]


def estimate_eta_with_bound(
    theta_t: ParamVector, theta_t1: ParamVector, probe: ProbeConfig | float
) -> tuple[float, float]:
    """Estimate of eta and a bound on its error, eta_hat * max|r_i| / B.

    r is what is left of the model change once the probe itself is removed,
    i.e. the other clients' summed update as seen through eta_hat.
    """
    magnitude = probe.magnitude if isinstance(probe, ProbeConfig) else probe
    if magnitude is None or not np.isfinite(magnitude) or magnitude == 0:
        raise ProtocolError(f"probe magnitude must be a finite non-zero number, got {magnitude}")
    before, after = as_param_vector(theta_t), as_param_vector(theta_t1)
    if before.shape != after.shape:
        raise ShapeMismatchError(f"length mismatch: {before.shape} vs {after.shape}")
    if before.shape[0] == 0:
        raise ShapeMismatchError("cannot estimate eta from zero-length vectors")
    change = before - after
    eta_hat = float(np.median(change / magnitude))
    if eta_hat == 0:
        return eta_hat, float("inf")
    residual = change / eta_hat - magnitude
    return eta_hat, abs(eta_hat) * float(np.max(np.abs(residual))) / abs(magnitude)


def probe_magnitude(grad: ParamVector, scale_factor: float) -> float:
    base = float(np.median(np.abs(grad)))
    if base == 0.0:
        base = float(np.max(np.abs(grad)))
    if base == 0.0:
        raise ProtocolError("cannot scale the probe from an all-zero gradient")
    return scale_factor * base


class ProbingDictatorClient(BaseClient):
    def __init__(
        self,
        client_id: int,
        evaluator: Objective,
        probe: ProbeConfig,
        *,
        known_eta: float | None = None,
    ) -> None:
        super().__init__(client_id)
        if known_eta is not None:
            _check_eta(known_eta)
        self.evaluator = evaluator
        self.probe = probe
        self.known_eta = known_eta
        self.magnitude: float | None = probe.magnitude
        self.eta_hat: float | None = None
        self.eta_bound: float | None = None
        self.eta_source = "known" if known_eta is not None else "estimated"
        self.shadow: ShadowState | None = None
        self.shadow_log: list[ParamVector] = []
        self._theta_0: ParamVector | None = None
        self._g0: ParamVector | None = None

    def update(self, round: int, theta: ParamVector) -> UpdateMessage:
        if round == 0:
            self._theta_0 = theta.copy()
            _, self._g0 = self.evaluator.evaluate(theta)
            if self.magnitude is None:
                self.magnitude = probe_magnitude(self._g0, self.probe.scale_factor)
            _LOG.info("probe_sent client=%s magnitude=%.6g", self.client_id, self.magnitude)
            return UpdateMessage(self.client_id, 0, np.full(theta.shape, self.magnitude, dtype=np.float64))

        if self._theta_0 is None or self._g0 is None or self.magnitude is None:
            raise ProtocolError("probing dictator joined after round 0")
        if round == 1:
            eta_hat, bound = estimate_eta_with_bound(self._theta_0, theta, self.magnitude)
            if self.known_eta is not None:
                eta_hat = self.known_eta
            _check_eta(eta_hat)
            self.eta_hat, self.eta_bound = eta_hat, bound
            first = self._theta_0 - eta_hat * self._g0
            self.shadow = ShadowState(current=first, previous=self._theta_0, kind="solo", step=1)
            self.shadow_log = [self._theta_0, first]
            _LOG.info("eta_estimated client=%s eta_hat=%.12g bound=%.3g source=%s",
                      self.client_id, eta_hat, bound, self.eta_source)
        assert self.shadow is not None and self.eta_hat is not None
        msg, self.shadow = dictator_update(self.client_id, round, theta, self.shadow, self.evaluator, self.eta_hat)
        self.shadow_log.append(self.shadow.current)
        return msg


def probe_then_attack(
    probe: ProbeConfig,
    client_id: int,
    evaluator: Objective,
    *,
    known_eta: float | None = None,
) -> ProbingDictatorClient:
    if probe.probe_round != 0:
        raise ProtocolError("the probe must be sent in round 0")
    return ProbingDictatorClient(client_id, evaluator, probe, known_eta=known_eta)


def compose_mutual_domination(cfg: ScenarioConfig) -> ScenarioConfig:
    """Same setup with every client acting as a dictator."""
    data = cfg.model_dump()
    data["scenario_kind"] = "mutual_domination"
    data["roles"] = {cid: DictatorRole().model_dump() for cid in range(1, cfg.protocol.num_clients + 1)}
    return ScenarioConfig.model_validate(data)


def mutual_domination_clients(evaluators: Mapping[int, Objective], eta: float) -> list[DictatorClient]:
    return [DictatorClient(cid, evaluators[cid], eta) for cid in sorted(evaluators)]
