from __future__ import annotations

import asyncio
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml
from pydantic import ValidationError

from attacks import (
    CheaterClient,
    CoalitionClient,
    DictatorClient,
    ProbingDictatorClient,
    probe_then_attack,
)
from config import get_output_root, get_workers
from dataset import DatasetShard, default_partition, gen_blobs, holdout_split, load_idx, partition_by_label
from errors import ConfigError, ProtocolError, ScenarioError, SimulationError
from logger import get_logger
from model_core import LossEvaluator, ParamVector, init_params
from models import (
    BlobsDataset,
    CoalitionSpec,
    EquivalenceReport,
    IdxDataset,
    NegativeControl,
    ProbeConfig,
    ScenarioConfig,
)
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
from protocol import ClientStrategy, HonestClient, RoundRecord, replay_check, run_rounds, solo_trajectory, subset_trajectory
from reporter import (
    MetricsTable,
    accuracy_payload,
    save_accuracy_json,
    save_checks_json,
    save_curves_csv,
    save_sigma_json,
    save_stamp,
)
from rng import derive_seed


_LOG = get_logger()

_DATA_STREAM = 1
_INIT_STREAM = 2
_SPLIT_STREAM = 100


# -- config ------------------------------------------------------------------


def _flatten_validation_errors(exc: ValidationError) -> list[str]:
    out: list[str] = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err.get("loc", ()))
        msg = str(err.get("msg", ""))
        if msg.startswith("Value error, "):
            msg = msg[len("Value error, "):]
        for line in msg.splitlines():
            out.append(f"{loc}: {line}" if loc else line)
    return out


def load_config(data: Any) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError(["config must be a mapping"])
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_flatten_validation_errors(e)) from e


def parse_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError([f"cannot read {path}: {e}"]) from e
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError([f"{path}: invalid YAML: {e}"]) from e
    return load_config(data)


def serialize_config(cfg: ScenarioConfig) -> str:
    data = cfg.model_dump(mode="json", exclude_none=True)
    return yaml.safe_dump(data, sort_keys=True, default_flow_style=False)


# -- setup -------------------------------------------------------------------


@dataclass
class ScenarioSetup:
    config: ScenarioConfig
    seed: int
    labels: dict[int, tuple[int, ...]]
    train: dict[int, LossEvaluator]
    holdout: dict[int, LossEvaluator]
    theta_0: ParamVector


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    seed: int
    metrics: MetricsTable
    reports: list[EquivalenceReport] = field(default_factory=list)
    controls: list[NegativeControl] = field(default_factory=list)
    records: list[RoundRecord] = field(default_factory=list)
    artifacts: dict[str, Path] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.reports) and all(c.checker_failed for c in self.controls)


def _load_source(cfg: ScenarioConfig, seed: int) -> DatasetShard:
    ds = cfg.dataset
    if isinstance(ds, BlobsDataset):
        return gen_blobs(ds.num_classes, ds.dim, ds.per_class, ds.sigma, derive_seed(seed, _DATA_STREAM))
    assert isinstance(ds, IdxDataset)
    shard = load_idx(ds.images, ds.labels, ds.limit)
    if shard.input_dim != cfg.model.input_dim:
        raise ConfigError([f"model.input_dim: {cfg.model.input_dim} does not match IDX images ({shard.input_dim} pixels)"])
    return shard


def prepare_scenario(cfg: ScenarioConfig, seed: int) -> ScenarioSetup:
    n = cfg.protocol.num_clients
    plan = cfg.partition or default_partition(n, cfg.model.num_classes)
    shards = partition_by_label(_load_source(cfg, seed), plan)
    train: dict[int, LossEvaluator] = {}
    holdout: dict[int, LossEvaluator] = {}
    for cid, shard in shards.items():
        fit, held = holdout_split(shard, cfg.holdout_fraction, derive_seed(seed, _SPLIT_STREAM + cid))
        train[cid] = LossEvaluator(cfg.model, fit)
        holdout[cid] = LossEvaluator(cfg.model, held)
    return ScenarioSetup(
        config=cfg,
        seed=seed,
        labels={cid: tuple(int(x) for x in labels) for cid, labels in plan.assignments.items()},
        train=train,
        holdout=holdout,
        theta_0=init_params(cfg.model, derive_seed(seed, _INIT_STREAM)),
    )


def build_clients(setup: ScenarioSetup) -> list[ClientStrategy]:
    cfg = setup.config
    eta, n = cfg.protocol.eta, cfg.protocol.num_clients
    clients: list[ClientStrategy] = []
    for cid, role in cfg.resolved_roles().items():
        ev = setup.train[cid]
        if role.kind == "honest":
            clients.append(HonestClient(cid, ev))
        elif role.kind == "dictator":
            clients.append(DictatorClient(cid, ev, eta))
        elif role.kind == "coalition":
            clients.append(CoalitionClient(cid, CoalitionSpec(members=role.members, num_clients=n), ev, eta))
        elif role.kind == "cheater":
            clients.append(
                CheaterClient(cid, role.partner, n, ev, eta, role.betrayal_round, window=role.window)
            )
        elif role.kind == "probe":
            probe = ProbeConfig(magnitude=role.magnitude, scale_factor=role.scale_factor)
            clients.append(probe_then_attack(probe, cid, ev))
        else:
            raise ConfigError([f"roles.{cid}.kind: unknown role {role.kind}"])
    return clients


# -- checks ------------------------------------------------------------------


def _honest_records(setup: ScenarioSetup) -> list[RoundRecord]:
    honest = [HonestClient(cid, ev) for cid, ev in sorted(setup.train.items())]
    return run_rounds(setup.config.protocol, honest, setup.theta_0)


def run_checks(
    setup: ScenarioSetup, clients: list[ClientStrategy], records: list[RoundRecord]
) -> tuple[list[EquivalenceReport], list[NegativeControl]]:
    cfg = setup.config
    kind = cfg.scenario_kind
    if kind == "regular":
        _LOG.info("checks_skipped scenario=%s kind=regular", cfg.name)
        return [], []

    eta, steps = cfg.protocol.eta, cfg.protocol.rounds
    evs, theta_0 = setup.train, setup.theta_0
    by_id = {c.client_id: c for c in clients}
    roles = cfg.resolved_roles()
    honest = _honest_records(setup)
    reports: list[EquivalenceReport] = []
    controls: list[NegativeControl] = []

    if kind == "single_dictator":
        m = next(cid for cid, r in roles.items() if r.kind in ("dictator", "probe"))
        client = by_id[m]
        if isinstance(client, ProbingDictatorClient):
            if steps < 2:
                raise ProtocolError("probe scenarios need at least two rounds")
            assert client.eta_hat is not None and client.magnitude is not None
            shadow = solo_trajectory(evs[m], theta_0, client.eta_hat, steps)
            reports.append(check_probe(records, shadow, evs, eta, client.eta_hat, m))
            reports.append(check_eta_estimate(theta_0, client.magnitude, evs, eta, client.eta_hat, m))
            plain = solo_trajectory(evs[m], theta_0, eta, steps)
            controls.append(negative_control(check_probe, honest, plain, evs, eta, eta, m))
        else:
            solo = solo_trajectory(evs[m], theta_0, eta, steps)
            reports.append(check_single_dictator(records, solo, evs, eta, m))
            controls.append(negative_control(check_single_dictator, honest, solo, evs, eta, m))

    elif kind == "coalition":
        members = sorted(cid for cid, r in roles.items() if r.kind == "coalition")
        subset = subset_trajectory({k: evs[k] for k in members}, theta_0, eta, steps, num_clients=len(evs))
        reports.append(check_coalition(records, subset, evs, eta, members))
        controls.append(negative_control(check_coalition, honest, subset, evs, eta, members))

    elif kind == "mutual_domination":
        if steps < 2:
            raise ProtocolError("mutual domination check needs at least two rounds")
        reports.append(check_mutual_domination(records, evs, eta))
        controls.append(negative_control(check_mutual_domination, honest, evs, eta))

    elif kind == "betrayal":
        c = next(cid for cid, r in roles.items() if r.kind == "cheater")
        cheater = by_id[c]
        assert isinstance(cheater, CheaterClient)
        e, p, window = cheater.betrayal_round, cheater.partner, cheater.window
        reports.append(check_betrayal(records, cheater.cheat_log, evs, eta, e, c, p, window=window))
        controls.append(negative_control(check_betrayal, honest, {}, evs, eta, e, c, p, window=window))
        if steps >= e + 2:
            secret = solo_trajectory(evs[c], theta_0, eta, steps)
            reports.append(check_post_betrayal(records, secret, evs, eta, e, c))
            controls.append(negative_control(check_post_betrayal, honest, secret, evs, eta, e, c))

    for r in reports:
        level = _LOG.info if r.passed else _LOG.warning
        level("check claim=%s passed=%s diff=%.3g tol=%.1g", r.claim_id, r.passed, r.diff_inf_norm, r.tolerance)
    for ctl in controls:
        if not ctl.checker_failed:
            _LOG.warning("negative_control_passed claim=%s diff=%.3g", ctl.claim_id, ctl.diff_inf_norm)
    return reports, controls


# -- runs --------------------------------------------------------------------


def resolve_output_dir(cfg: ScenarioConfig, out_dir: str | Path | None = None) -> Path:
    base = Path(out_dir) if out_dir is not None else Path(cfg.outputs)
    if not base.is_absolute():
        base = get_output_root() / base
    return base


def run_scenario(
    cfg: ScenarioConfig,
    *,
    seed: int | None = None,
    out_dir: str | Path | None = None,
    write: bool = True,
) -> ScenarioResult:
    seed = cfg.seed if seed is None else seed
    _LOG.info("scenario_start name=%s kind=%s seed=%s", cfg.name, cfg.scenario_kind, seed)
    try:
        setup = prepare_scenario(cfg, seed)
        clients = build_clients(setup)
        records = run_rounds(cfg.protocol, clients, setup.theta_0, metrics=setup.holdout)
        mismatch = replay_check(records, cfg.protocol.eta)
        if mismatch != 0.0:
            raise ProtocolError(f"round records do not replay (mismatch {mismatch:.3g})")
        reports, controls = run_checks(setup, clients, records)
    except ConfigError:
        raise
    except SimulationError as e:
        _LOG.exception("scenario_failed name=%s seed=%s", cfg.name, seed)
        raise ScenarioError(cfg.name, e) from e

    result = ScenarioResult(cfg, seed, MetricsTable.from_records(records), reports, controls, records)
    if write:
        target = resolve_output_dir(cfg, out_dir)
        result.artifacts = write_artifacts(result, setup.labels, target)
    _LOG.info("scenario_done name=%s seed=%s ok=%s", cfg.name, seed, result.ok)
    return result


def write_artifacts(result: ScenarioResult, labels: dict[int, tuple[int, ...]], out_dir: Path) -> dict[str, Path]:
    cfg = result.config
    payload = accuracy_payload(cfg.name, cfg.scenario_kind, result.seed, result.metrics, labels)
    _LOG.info("artifacts_write scenario=%s seed=%s dir=%s", cfg.name, result.seed, out_dir)
    return {
        "curves": save_curves_csv(out_dir, result.metrics),
        "accuracy": save_accuracy_json(out_dir, payload),
        "checks": save_checks_json(out_dir, cfg.name, result.seed, result.reports, result.controls),
        "stamp": save_stamp(out_dir, serialize_config(cfg), result.seed),
    }


def seed_dir_names(seeds: list[int]) -> list[str]:
    """One directory per run: `seed-<n>`, then `seed-<n>-<k>` for the k-th repeat of n."""
    seen: dict[int, int] = {}
    names = []
    for seed in seeds:
        k = seen.get(seed, 0)
        seen[seed] = k + 1
        names.append(f"seed-{seed}" if k == 0 else f"seed-{seed}-{k}")
    return names


async def _run_seeds(cfg: ScenarioConfig, seeds: list[int], base: Path, workers: int) -> list[ScenarioResult]:
    sem = asyncio.Semaphore(max(1, workers))

    async def _one(seed: int, name: str) -> ScenarioResult:
        async with sem:
            return await asyncio.to_thread(run_scenario, cfg, seed=seed, out_dir=base / name)

    return list(await asyncio.gather(*[_one(s, n) for s, n in zip(seeds, seed_dir_names(seeds))]))


def run_multi_seed(
    cfg: ScenarioConfig,
    *,
    seeds: list[int] | None = None,
    out_dir: str | Path | None = None,
    workers: int | None = None,
) -> list[ScenarioResult]:
    seeds = list(seeds if seeds is not None else (cfg.seeds or (cfg.seed,)))
    if not seeds:
        raise ConfigError(["seeds: must list at least one seed"])
    base = resolve_output_dir(cfg, out_dir)
    results = asyncio.run(_run_seeds(cfg, seeds, base, workers or get_workers()))
    save_sigma_json(base, seeds, [r.metrics.final_accuracy() for r in results])
    return results


def probe_eta(cfg: ScenarioConfig, *, seed: int | None = None) -> dict[str, float]:
    """Runs the first two rounds and reports the prober's estimate of eta."""
    probers = [cid for cid, r in cfg.resolved_roles().items() if r.kind == "probe"]
    if not probers:
        raise ConfigError(["roles: probe-eta needs a client with kind 'probe'"])
    seed = cfg.seed if seed is None else seed
    short = cfg.protocol.model_copy(update={"rounds": 2})
    try:
        setup = prepare_scenario(cfg, seed)
        clients = build_clients(setup)
        run_rounds(short, clients, setup.theta_0)
    except ConfigError:
        raise
    except SimulationError as e:
        raise ScenarioError(cfg.name, e) from e
    prober = next(c for c in clients if c.client_id == probers[0])
    assert isinstance(prober, ProbingDictatorClient)
    assert prober.eta_hat is not None and prober.eta_bound is not None and prober.magnitude is not None
    eta = cfg.protocol.eta
    return {
        "client_id": float(prober.client_id),
        "eta": eta,
        "eta_hat": prober.eta_hat,
        "relative_error": abs(prober.eta_hat - eta) / eta,
        "bound": prober.eta_bound,
        "magnitude": prober.magnitude,
    }
