"""Synchronous federated round engine.

Each round: broadcast theta_t, collect one update per client in ascending id
order, deliver peer messages, apply theta_{t+1} = theta_t - eta * sum(updates),
then record per-client metrics measured on theta_{t+1}.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from errors import ProtocolError, ShapeMismatchError, SimulationError, StrategyError
from logger import get_logger
from model_core import Objective, ParamVector, as_param_vector, axpy, ensure_finite, inf_norm, sum_of
from models import ProtocolConfig


_LOG = get_logger()


@dataclass(frozen=True)
class UpdateMessage:
    client_id: int
    round: int
    update: ParamVector


@dataclass(frozen=True)
class PeerMessage:
    sender: int
    recipient: int
    round: int
    payload: ParamVector
    shadow_digest: str


@dataclass(frozen=True)
class ClientMetrics:
    client_id: int
    loss: float
    accuracy: float | None


@dataclass(frozen=True)
class RoundRecord:
    round: int
    theta_before: ParamVector
    updates: tuple[UpdateMessage, ...]
    theta_after: ParamVector
    per_client_metrics: tuple[ClientMetrics, ...] = ()

    def update_of(self, client_id: int) -> ParamVector:
        for msg in self.updates:
            if msg.client_id == client_id:
                return msg.update
        raise KeyError(f"no update from client {client_id} in round {self.round}")


class ClientStrategy(Protocol):
    client_id: int
    peers: tuple[int, ...]

    def update(self, round: int, theta: ParamVector) -> UpdateMessage: ...

    def drain_outbox(self) -> list[PeerMessage]: ...

    def receive(self, round: int, messages: Sequence[PeerMessage]) -> None: ...


class BaseClient:
    """No peers, nothing to send, nothing to receive."""

    def __init__(self, client_id: int) -> None:
        self.client_id = client_id
        self.peers: tuple[int, ...] = ()
        self._outbox: list[PeerMessage] = []

    def drain_outbox(self) -> list[PeerMessage]:
        out, self._outbox = self._outbox, []
        return out

    def receive(self, round: int, messages: Sequence[PeerMessage]) -> None:
        if messages:
            raise ProtocolError(f"client {self.client_id} has no peers but received {len(messages)} message(s)")


class HonestClient(BaseClient):
    def __init__(self, client_id: int, evaluator: Objective) -> None:
        super().__init__(client_id)
        self.evaluator = evaluator

    def update(self, round: int, theta: ParamVector) -> UpdateMessage:
        _, grad = self.evaluator.evaluate(theta)
        return UpdateMessage(self.client_id, round, grad)


class Mailbox:
    """Peer-to-peer channel; messages posted in a round are delivered at its end."""

    def __init__(self) -> None:
        self._pending: dict[int, list[PeerMessage]] = {}

    def post(self, message: PeerMessage, *, sender_peers: Iterable[int]) -> None:
        if message.recipient not in set(sender_peers):
            raise ProtocolError(f"client {message.sender} may not message client {message.recipient}")
        self._pending.setdefault(message.recipient, []).append(message)

    def deliver(self, round: int, clients: Mapping[int, ClientStrategy]) -> None:
        unknown = sorted(set(self._pending) - set(clients))
        if unknown:
            raise ProtocolError(f"messages addressed to unknown client(s) {unknown}")
        for cid in sorted(clients):
            client = clients[cid]
            msgs = sorted(self._pending.get(cid, []), key=lambda m: m.sender)
            if client.peers or msgs:
                client.receive(round, msgs)
        self._pending.clear()


def server_step(
    theta_t: ParamVector,
    updates: Sequence[UpdateMessage],
    eta: float,
    *,
    expected_clients: Iterable[int] | None = None,
) -> ParamVector:
    if eta < 0:
        raise ProtocolError("eta must be non-negative")
    if not updates:
        raise ProtocolError("no updates to aggregate")
    ids = [u.client_id for u in updates]
    dupes = sorted({cid for cid in ids if ids.count(cid) > 1})
    if dupes:
        raise ProtocolError(f"duplicate update from client(s) {dupes}")
    if expected_clients is not None:
        missing = sorted(set(expected_clients) - set(ids))
        extra = sorted(set(ids) - set(expected_clients))
        if missing:
            raise ProtocolError(f"missing update from client(s) {missing}")
        if extra:
            raise ProtocolError(f"unexpected update from client(s) {extra}")
    theta_t = as_param_vector(theta_t)
    total = sum_of((u.client_id, u.update) for u in updates)
    if total.shape != theta_t.shape:
        raise ShapeMismatchError(f"update length {total.shape[0]} does not match model length {theta_t.shape[0]}")
    return ensure_finite(theta_t - eta * total, "theta")


def _collect(client: ClientStrategy, t: int, broadcast: ParamVector) -> UpdateMessage:
    cid = client.client_id
    try:
        msg = client.update(t, broadcast)
    except SimulationError as e:
        raise StrategyError(cid, t, f"{type(e).__name__}: {e}") from e
    except Exception as e:
        raise StrategyError(cid, t, f"unexpected {type(e).__name__}: {e}") from e
    if not isinstance(msg, UpdateMessage):
        raise StrategyError(cid, t, "did not return an UpdateMessage")
    if msg.client_id != cid or msg.round != t:
        raise StrategyError(cid, t, f"message stamped client={msg.client_id} round={msg.round}")
    if msg.update.shape != broadcast.shape:
        raise StrategyError(cid, t, f"update has shape {msg.update.shape}, expected {broadcast.shape}")
    if not np.all(np.isfinite(msg.update)):
        raise StrategyError(cid, t, "update contains non-finite entries")
    return msg


def _metrics(theta: ParamVector, metrics: Mapping[int, Objective]) -> tuple[ClientMetrics, ...]:
    rows = []
    for cid in sorted(metrics):
        ev = metrics[cid]
        loss, _ = ev.evaluate(theta)
        acc_fn = getattr(ev, "accuracy", None)
        rows.append(ClientMetrics(cid, float(loss), float(acc_fn(theta)) if acc_fn else None))
    return tuple(rows)


def run_rounds(
    config: ProtocolConfig,
    clients: Sequence[ClientStrategy],
    theta_0: ParamVector,
    *,
    metrics: Mapping[int, Objective] | None = None,
) -> list[RoundRecord]:
    by_id = {c.client_id: c for c in clients}
    if len(by_id) != len(clients):
        raise ProtocolError("client ids must be unique")
    if len(by_id) != config.num_clients:
        raise ProtocolError(f"expected {config.num_clients} clients, got {len(by_id)}")
    order = sorted(by_id)

    theta = ensure_finite(as_param_vector(theta_0).copy(), "theta_0")
    records: list[RoundRecord] = []
    for t in range(config.rounds):
        broadcast = theta.copy()
        broadcast.setflags(write=False)

        mailbox = Mailbox()
        updates = []
        for cid in order:
            client = by_id[cid]
            updates.append(_collect(client, t, broadcast))
            for pm in client.drain_outbox():
                if pm.sender != cid or pm.round != t:
                    raise StrategyError(cid, t, f"peer message stamped sender={pm.sender} round={pm.round}")
                mailbox.post(pm, sender_peers=client.peers)
        try:
            mailbox.deliver(t, by_id)
        except SimulationError:
            _LOG.exception("peer_exchange_failed round=%s", t)
            raise

        theta_after = server_step(theta, updates, config.eta, expected_clients=order)
        row = _metrics(theta_after, metrics) if metrics else ()
        records.append(RoundRecord(t, theta, tuple(updates), theta_after, row))
        _LOG.debug("round_done round=%s step_inf=%.6g", t, inf_norm(theta_after - theta))
        theta = theta_after
    return records


def solo_trajectory(ev: Objective, theta_0: ParamVector, eta: float, steps: int) -> list[ParamVector]:
    """theta_hat_0 .. theta_hat_steps of plain gradient descent on one objective."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    out = [as_param_vector(theta_0).copy()]
    for _ in range(steps):
        _, g = ev.evaluate(out[-1])
        out.append(axpy(-eta, g, out[-1]))
    return out


def subset_trajectory(
    evs: Mapping[int, Objective] | Sequence[Objective],
    theta_0: ParamVector,
    eta: float,
    steps: int,
    *,
    num_clients: int | None = None,
) -> list[ParamVector]:
    """Gradient descent on the sum of a coalition's objectives, summed in id order."""
    members = dict(evs) if isinstance(evs, Mapping) else dict(enumerate(evs, start=1))
    if len(members) < 2:
        raise ProtocolError("a coalition needs at least two members")
    if num_clients is not None and len(members) >= num_clients:
        raise ProtocolError(f"coalition of {len(members)} must be smaller than N={num_clients}")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    out = [as_param_vector(theta_0).copy()]
    for _ in range(steps):
        cur = out[-1]
        total = sum_of((k, ev.evaluate(cur)[1]) for k, ev in members.items())
        out.append(axpy(-eta, total, cur))
    return out


def replay_check(records: Sequence[RoundRecord], eta: float) -> float:
    """Worst mismatch between recorded and recomputed server steps (0.0 when consistent)."""
    worst = 0.0
    prev_after: ParamVector | None = None
    for rec in records:
        if prev_after is not None and not np.array_equal(prev_after, rec.theta_before):
            worst = max(worst, inf_norm(prev_after - rec.theta_before))
        again = server_step(rec.theta_before, rec.updates, eta)
        worst = max(worst, inf_norm(again - rec.theta_after))
        prev_after = rec.theta_after
    return worst
