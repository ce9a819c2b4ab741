from __future__ import annotations

from typing import Annotated, Literal, Union

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PositiveFloat,
    PositiveInt,
    field_validator,
    model_validator,
)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelSpec(_Strict):
    kind: Literal["linear_softmax", "mlp1"]
    input_dim: PositiveInt
    num_classes: PositiveInt
    hidden_dim: PositiveInt | None = None
    # ignored for linear_softmax
    activation: Literal["tanh", "relu"] = "tanh"

    @model_validator(mode="after")
    def _check_layout(self) -> "ModelSpec":
        if self.kind == "mlp1" and self.hidden_dim is None:
            raise ValueError("hidden_dim is required for mlp1")
        if self.kind == "linear_softmax" and self.hidden_dim is not None:
            raise ValueError("hidden_dim only applies to mlp1")
        return self

    @property
    def num_params(self) -> int:
        d, c = self.input_dim, self.num_classes
        if self.kind == "linear_softmax":
            return d * c + c
        h = int(self.hidden_dim or 0)
        return d * h + h + h * c + c


class ProtocolConfig(_Strict):
    eta: PositiveFloat
    rounds: PositiveInt
    num_clients: int = Field(ge=2)


class PartitionPlan(_Strict):
    assignments: dict[int, tuple[int, ...]]

    @model_validator(mode="after")
    def _check_disjoint(self) -> "PartitionPlan":
        owner: dict[int, int] = {}
        for cid in sorted(self.assignments):
            if cid < 1:
                raise ValueError(f"client id {cid} must be >= 1")
            labels = self.assignments[cid]
            if not labels:
                raise ValueError(f"client {cid} has no labels")
            for label in labels:
                if label < 0:
                    raise ValueError(f"label {label} must be >= 0")
                if label in owner:
                    raise ValueError(f"overlapping label sets: label {label} in clients {owner[label]} and {cid}")
                owner[label] = cid
        return self


class ProbeConfig(_Strict):
    # None means "scale from the prober's own gradient at round 0"
    magnitude: PositiveFloat | None = None
    scale_factor: PositiveFloat = 1e8
    probe_round: Literal[0] = 0


class CoalitionSpec(_Strict):
    members: tuple[int, ...]
    num_clients: int = Field(ge=2)

    @field_validator("members")
    @classmethod
    def _sorted_unique(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        if len(set(v)) != len(v):
            raise ValueError("coalition members must be unique")
        return tuple(sorted(v))

    @model_validator(mode="after")
    def _check_size(self) -> "CoalitionSpec":
        n = self.num_clients
        for m in self.members:
            if not 1 <= m <= n:
                raise ValueError(f"member {m} outside 1..{n}")
        if not 1 < len(self.members) < n:
            raise ValueError(f"coalition size must satisfy 1 < P < N, got P={len(self.members)} N={n}")
        return self

    @property
    def size(self) -> int:
        return len(self.members)


class EquivalenceReport(_Strict):
    claim_id: str
    lhs_norm: float
    rhs_norm: float
    diff_inf_norm: float
    residual_inf_norm: float
    tolerance: float
    passed: bool
    rounds_checked: int = 0
    detail: str = ""

    @model_validator(mode="after")
    def _check_passed(self) -> "EquivalenceReport":
        expected = bool(self.diff_inf_norm <= self.tolerance)
        if self.passed != expected:
            raise ValueError("passed must equal diff_inf_norm <= tolerance")
        return self


class NegativeControl(_Strict):
    claim_id: str
    diff_inf_norm: float
    tolerance: float
    checker_failed: bool


# -- scenario configuration ---------------------------------------------------


class BlobsDataset(_Strict):
    kind: Literal["blobs"] = "blobs"
    num_classes: int = Field(default=10, ge=2)
    dim: PositiveInt = 16
    per_class: PositiveInt = 50
    sigma: PositiveFloat = 0.5


class IdxDataset(_Strict):
    kind: Literal["idx"] = "idx"
    images: str
    labels: str
    limit: PositiveInt = 1000
    num_classes: PositiveInt = 10


DatasetConfig = Annotated[Union[BlobsDataset, IdxDataset], Field(discriminator="kind")]


class HonestRole(_Strict):
    kind: Literal["honest"] = "honest"


class DictatorRole(_Strict):
    kind: Literal["dictator"] = "dictator"


class CoalitionRole(_Strict):
    kind: Literal["coalition"] = "coalition"
    members: tuple[int, ...]


class CheaterRole(_Strict):
    kind: Literal["cheater"] = "cheater"
    partner: int
    betrayal_round: int = Field(ge=2)
    window: Literal["proof", "pseudocode"] = "proof"


class ProbeRole(_Strict):
    kind: Literal["probe"] = "probe"
    magnitude: PositiveFloat | None = None
    scale_factor: PositiveFloat = 1e8


Role = Annotated[
    Union[HonestRole, DictatorRole, CoalitionRole, CheaterRole, ProbeRole],
    Field(discriminator="kind"),
]

ScenarioKind = Literal["regular", "single_dictator", "coalition", "mutual_domination", "betrayal"]


class ScenarioConfig(_Strict):
    schema_version: Literal[1] = 1
    name: str = Field(min_length=1)
    scenario_kind: ScenarioKind = "regular"
    seed: int = 0
    seeds: tuple[int, ...] | None = None
    model: ModelSpec
    dataset: DatasetConfig = Field(default_factory=BlobsDataset)
    partition: PartitionPlan | None = None
    protocol: ProtocolConfig
    roles: dict[int, Role] = Field(default_factory=dict)
    holdout_fraction: float = Field(default=0.2, gt=0.0, lt=1.0)
    outputs: str = "runs"

    @model_validator(mode="after")
    def _check_consistency(self) -> "ScenarioConfig":
        errors = scenario_errors(self)
        if errors:
            raise ValueError("\n".join(errors))
        return self

    def resolved_roles(self) -> dict[int, HonestRole | DictatorRole | CoalitionRole | CheaterRole | ProbeRole]:
        default = DictatorRole() if self.scenario_kind == "mutual_domination" else HonestRole()
        return {cid: self.roles.get(cid, default) for cid in range(1, self.protocol.num_clients + 1)}


def scenario_errors(cfg: ScenarioConfig) -> list[str]:
    """Cross-field checks; every message starts with the offending field path."""
    n = cfg.protocol.num_clients
    errors: list[str] = []

    if cfg.seeds is not None and not cfg.seeds:
        errors.append("seeds: must list at least one seed")

    for cid in sorted(cfg.roles):
        if not 1 <= cid <= n:
            errors.append(f"roles.{cid}: client id outside 1..{n}")

    if cfg.partition is not None and set(cfg.partition.assignments) != set(range(1, n + 1)):
        errors.append(f"partition.assignments: clients must be exactly 1..{n}")

    ds = cfg.dataset
    if ds.num_classes != cfg.model.num_classes:
        errors.append(f"model.num_classes: {cfg.model.num_classes} does not match dataset.num_classes {ds.num_classes}")
    if isinstance(ds, BlobsDataset) and ds.dim != cfg.model.input_dim:
        errors.append(f"model.input_dim: {cfg.model.input_dim} does not match dataset.dim {ds.dim}")

    if errors:
        return errors

    roles = cfg.resolved_roles()
    kinds = {cid: r.kind for cid, r in roles.items()}
    kind = cfg.scenario_kind

    def _only(allowed: set[str], what: str) -> None:
        for cid, k in kinds.items():
            if k not in allowed:
                errors.append(f"roles.{cid}.kind: {what} scenarios do not allow '{k}'")

    if kind == "regular":
        _only({"honest"}, "regular")
    elif kind == "single_dictator":
        _only({"honest", "dictator", "probe"}, "single_dictator")
        attackers = [cid for cid, k in kinds.items() if k in ("dictator", "probe")]
        if len(attackers) != 1:
            errors.append(f"roles: single_dictator needs exactly one dictator or probe client, got {len(attackers)}")
        if any(k == "probe" for k in kinds.values()) and cfg.protocol.rounds < 2:
            errors.append("protocol.rounds: a probing client needs at least 2 rounds")
    elif kind == "mutual_domination":
        _only({"dictator"}, "mutual_domination")
        if cfg.protocol.rounds < 2:
            errors.append("protocol.rounds: mutual_domination needs at least 2 rounds")
    elif kind == "coalition":
        _only({"honest", "coalition"}, "coalition")
        _coalition_errors(roles, n, errors)
    elif kind == "betrayal":
        _only({"honest", "coalition", "cheater"}, "betrayal")
        _betrayal_errors(cfg, roles, n, errors)
    return errors


def _coalition_errors(roles: dict, n: int, errors: list[str]) -> None:
    holders = sorted(cid for cid, r in roles.items() if r.kind == "coalition")
    if not holders:
        errors.append("roles: coalition scenario needs coalition members")
        return
    for cid in holders:
        members = roles[cid].members
        for m in members:
            if not 1 <= m <= n:
                errors.append(f"roles.{cid}.members: member {m} outside 1..{n}")
        if set(members) != set(holders):
            errors.append(f"roles.{cid}.members: {sorted(members)} does not match coalition clients {holders}")
    if not 1 < len(holders) < n:
        errors.append(f"roles: coalition size must satisfy 1 < P < N, got P={len(holders)} N={n}")


def _betrayal_errors(cfg: ScenarioConfig, roles: dict, n: int, errors: list[str]) -> None:
    cheaters = sorted(cid for cid, r in roles.items() if r.kind == "cheater")
    if len(cheaters) != 1:
        errors.append(f"roles: betrayal needs exactly one cheater, got {len(cheaters)}")
        return
    c = cheaters[0]
    role = roles[c]
    p = role.partner
    if p == c or not 1 <= p <= n:
        errors.append(f"roles.{c}.partner: {p} is not another client in 1..{n}")
        return
    partner_role = roles[p]
    if partner_role.kind != "coalition" or set(partner_role.members) != {c, p}:
        errors.append(f"roles.{p}: partner must be a coalition client with members [{min(c, p)}, {max(c, p)}]")
    others = [cid for cid, r in roles.items() if r.kind == "coalition" and cid != p]
    if others:
        errors.append(f"roles: betrayal allows only the partner as coalition client, also got {others}")
    if n < 3:
        errors.append("protocol.num_clients: betrayal needs at least one client outside the coalition")
    if cfg.protocol.rounds < role.betrayal_round + 1:
        errors.append(
            f"roles.{c}.betrayal_round: {role.betrayal_round} needs protocol.rounds >= {role.betrayal_round + 1}"
        )
