"""Federated orchestration: selection, broadcast, exchange, local updates,
and FedAvg aggregation.

One round is: broadcast the global model to the selected clients; on exchange
rounds resample each client's public shard, generate the shard's adversarial
version where the strategy calls for it, and swap shards all-to-all among the
selected clients; run every selected client's local update; aggregate the
updated parameters. Clients that are not selected keep stale state.
"""

from __future__ import annotations

import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import evaluation
from .attacks import AttackConfig, attack_dataset
from .config import ExperimentConfig
from .data import (
    Dataset,
    default_transforms,
    dirichlet_partition,
    feature_skew_partition,
    holdout_split,
    load_dataset,
    make_blobs,
    sample_local_public,
    split_public_private,
)
from .errors import ConfigError, ProtocolError, ShapeError
from .nn import MlpParams, init_params
from .rng import (
    TAG_CLIENT,
    TAG_EXCHANGE_ATTACK,
    TAG_INIT,
    TAG_SELECT,
    TAG_WARMUP,
    derive_seed,
    rng_from,
)
from .strategies import StrategyKind, local_update, train_plain


@dataclass
class ClientState:
    """One federated participant and everything it currently holds."""

    id: int
    params: MlpParams
    private_data: Dataset
    local_public: Dataset | None = None
    local_adv: Dataset | None = None
    ensemble_clean: Dataset | None = None
    ensemble_adv: Dataset | None = None
    ensemble_origins: np.ndarray | None = None  # generating client id per ensemble row
    rng_seed: int = 0
    last_local_loss: float | None = None


@dataclass
class ServerState:
    global_params: MlpParams
    round: int = 0
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class FederationConfig:
    """Knobs consumed by run_round. Extracted from ExperimentConfig."""

    num_clients: int
    participation: float
    rounds: int
    local_epochs: int
    exchange_every: int
    lr: float
    batch_size: int
    alpha: float
    strategy: StrategyKind
    attack: AttackConfig
    weighting: str = "by_size"

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigError(f"num_clients must be >= 1, got {self.num_clients}")
        if not 0.0 < self.participation <= 1.0:
            raise ConfigError(f"participation must be in (0, 1], got {self.participation}")
        if math.floor(self.participation * self.num_clients) < 1:
            raise ConfigError("participation * num_clients selects no clients")
        if self.exchange_every < 1:
            raise ConfigError(f"exchange_every must be >= 1, got {self.exchange_every}")
        if self.rounds < 0 or self.local_epochs < 0:
            raise ConfigError("rounds and local_epochs must be >= 0")
        if self.weighting not in ("uniform", "by_size"):
            raise ConfigError(f"weighting must be 'uniform' or 'by_size', got {self.weighting!r}")


def select_clients(num_clients: int, participation: float, round_idx: int, seed: int) -> list[int]:
    """Seeded sample of floor(participation * num_clients) ids, ascending."""
    count = math.floor(participation * num_clients)
    if count < 1:
        raise ConfigError("selection would be empty")
    rng = rng_from(seed, TAG_SELECT, round_idx)
    return sorted(int(i) for i in rng.choice(num_clients, size=count, replace=False))


def fedavg(updates: list[tuple[MlpParams, int]], weighting: str = "by_size") -> MlpParams:
    """Weighted parameter average.

    uniform: every update weighs 1/N. by_size: update k weighs n_k / sum(n).
    Computed as ref + sum(w_i * (theta_i - ref)) so aggregating identical
    params returns them bit-for-bit.
    """
    if not updates:
        raise ConfigError("fedavg needs at least one update")
    if weighting == "uniform":
        weights = [1.0 / len(updates)] * len(updates)
    elif weighting == "by_size":
        total = sum(n for _, n in updates)
        if total <= 0:
            raise ConfigError("by_size weighting needs a positive total example count")
        weights = [n / total for _, n in updates]
    else:
        raise ConfigError(f"unknown weighting {weighting!r}")

    ref = updates[0][0]
    sizes = ref.layer_sizes
    for params, _ in updates[1:]:
        if params.layer_sizes != sizes:
            raise ShapeError("updates are not shape-congruent")
    layers = []
    for li in range(len(ref.layers)):
        w_ref, b_ref = ref.layers[li]
        dw = np.zeros_like(w_ref)
        db = np.zeros_like(b_ref)
        for (params, _), w in zip(updates, weights):
            lw, lb = params.layers[li]
            dw += w * (lw - w_ref)
            db += w * (lb - b_ref)
        layers.append((w_ref + dw, b_ref + db))
    return MlpParams(layers)


def _distribute_shards(clients: list[ClientState], shards: dict[int, Dataset], adversarial: bool) -> None:
    ids = sorted(shards)
    template = shards[ids[0]]
    for client in clients:
        parts = [shards[i] for i in ids if i != client.id]
        if parts:
            ensemble = Dataset.concat(parts)
            origins = np.concatenate(
                [np.full(len(shards[i]), i, dtype=np.int64) for i in ids if i != client.id]
            )
        else:
            ensemble = Dataset(np.empty((0, template.dim)), np.empty(0, dtype=np.int64),
                               template.num_classes)
            origins = np.empty(0, dtype=np.int64)
        if adversarial:
            client.ensemble_adv = ensemble
        else:
            client.ensemble_clean = ensemble
        client.ensemble_origins = origins


def exchange_adversarial(clients: list[ClientState]) -> list[ClientState]:
    """All-to-all swap of adversarial public shards, replacing any previous
    ensemble. Every client must have generated local_adv this exchange."""
    missing = [c.id for c in clients if c.local_adv is None]
    if missing:
        raise ProtocolError(f"clients {missing} have no local adversarial shard to exchange")
    _distribute_shards(clients, {c.id: c.local_adv for c in clients}, adversarial=True)
    return clients


def exchange_clean(clients: list[ClientState]) -> list[ClientState]:
    """All-to-all swap of clean public shards (EFNT-style ensembles)."""
    missing = [c.id for c in clients if c.local_public is None]
    if missing:
        raise ProtocolError(f"clients {missing} have no local public shard to exchange")
    _distribute_shards(clients, {c.id: c.local_public for c in clients}, adversarial=False)
    return clients


@dataclass
class RoundResult:
    round: int
    selected: list[int]
    mean_local_loss: float


def _local_update_task(args) -> ClientState:
    client, kind, epochs, lr, batch_size, attack, round_idx, budget = args
    return local_update(
        client, kind, epochs, lr, batch_size, attack,
        seed=client.rng_seed, round_idx=round_idx, ensemble_budget=budget,
    )


def run_round(
    server: ServerState,
    clients: list[ClientState],
    g_public: Dataset,
    cfg: FederationConfig,
    round_idx: int,
    seed: int,
    pool: ProcessPoolExecutor | None = None,
) -> RoundResult:
    """Advance the federation by one round, mutating server and clients."""
    if len(clients) != cfg.num_clients:
        raise ConfigError(f"expected {cfg.num_clients} clients, got {len(clients)}")
    selected = select_clients(cfg.num_clients, cfg.participation, round_idx, seed)
    participants = [clients[k] for k in selected]

    for client in participants:
        client.params = server.global_params.copy()

    if round_idx % cfg.exchange_every == 0:
        for client in participants:
            client.local_public = sample_local_public(
                g_public, cfg.alpha, client.id, seed, round_idx
            )
            if cfg.strategy in (StrategyKind.EFNT_AT, StrategyKind.EFAT):
                client.local_adv = attack_dataset(
                    client.params,
                    client.local_public,
                    cfg.attack,
                    derive_seed(seed, TAG_EXCHANGE_ATTACK, client.id, round_idx),
                )
        if cfg.strategy is StrategyKind.EFAT:
            exchange_adversarial(participants)
        elif cfg.strategy in (StrategyKind.EFNT, StrategyKind.EFNT_AT):
            exchange_clean(participants)
        # baseline: no exchange; its ensembles stay empty

    shard_rows = len(participants[0].local_public) if participants[0].local_public is not None else 0
    baseline_budget = (len(participants) - 1) * shard_rows

    tasks = [
        (client, cfg.strategy, cfg.local_epochs, cfg.lr, cfg.batch_size, cfg.attack,
         round_idx, baseline_budget if cfg.strategy is StrategyKind.BASELINE else None)
        for client in participants
    ]
    if pool is not None:
        updated = list(pool.map(_local_update_task, tasks))
    else:
        updated = [_local_update_task(t) for t in tasks]
    for k, client in zip(selected, updated):
        clients[k] = client

    server.global_params = fedavg(
        [(clients[k].params, len(clients[k].private_data)) for k in selected],
        cfg.weighting,
    )
    server.round += 1
    mean_loss = float(np.mean([clients[k].last_local_loss for k in selected]))
    return RoundResult(round=round_idx, selected=selected, mean_local_loss=mean_loss)


def build_federation(cfg: ExperimentConfig) -> tuple[ServerState, list[ClientState], Dataset, Dataset]:
    """Materialize datasets, partition, clients and the initial server model.

    Returns (server, clients, global_public, held_out_test).
    """
    if cfg.dataset_path:
        corpus = load_dataset(cfg.dataset_path)
    else:
        corpus = make_blobs(cfg.classes, cfg.dim, cfg.per_class, cfg.spread, cfg.seed)
    train_pool, held_out = holdout_split(corpus, cfg.test_fraction, cfg.seed)
    p_total, g_public = split_public_private(train_pool, cfg.public_fraction, cfg.seed)

    if cfg.skew == "dirichlet":
        plan = dirichlet_partition(p_total, cfg.clients, cfg.gamma, cfg.seed)
        shards = [p_total.subset(idx) for idx in plan.assignments]
    else:
        transforms = default_transforms(
            cfg.clients, cfg.feature_rotation_step, cfg.feature_brightness_step,
            cfg.feature_noise_std,
        )
        shards = feature_skew_partition(p_total, cfg.clients, transforms, cfg.seed)

    params = init_params(cfg.layer_sizes(corpus.dim, corpus.num_classes),
                         derive_seed(cfg.seed, TAG_INIT))
    if cfg.warmup_epochs > 0:
        params = train_plain(params, g_public, cfg.warmup_epochs, cfg.lr, cfg.batch_size,
                             derive_seed(cfg.seed, TAG_WARMUP))
    server = ServerState(global_params=params)
    clients = [
        ClientState(
            id=k,
            params=params.copy(),
            private_data=shards[k],
            rng_seed=derive_seed(cfg.seed, TAG_CLIENT, k),
        )
        for k in range(cfg.clients)
    ]
    return server, clients, g_public, held_out


@dataclass
class ExperimentResult:
    reports: list[evaluation.MetricsReport]
    global_params: MlpParams
    clients: list[ClientState]

    @property
    def final(self) -> evaluation.MetricsReport:
        return self.reports[-1]


def run_experiment(cfg: ExperimentConfig, on_report=None) -> ExperimentResult:
    """Full experiment: build, train T rounds, evaluate on the configured
    cadence. Deterministic for a fixed config regardless of worker count."""
    fed_cfg = cfg.federation_config()
    server, clients, g_public, held_out = build_federation(cfg)

    adversary = evaluation.train_adversary(
        held_out,
        cfg.layer_sizes(held_out.dim, held_out.num_classes),
        cfg.adversary_epochs,
        cfg.lr,
        cfg.seed,
        batch_size=cfg.batch_size,
    )
    suites = evaluation.build_attack_suites(adversary, held_out, cfg.eval_attacks(), cfg.seed)

    def evaluate(round_idx: int, participant_ids: list[int], mean_loss: float | None):
        models = {k: clients[k].params for k in participant_ids}
        report = evaluation.evaluate_round(
            round_idx, models, server.global_params, held_out, suites,
            adversary_id=cfg.adversary_label(), mean_local_loss=mean_loss,
        )
        server.history.append(report)
        if on_report is not None:
            on_report(report)
        return report

    reports = [evaluate(0, list(range(cfg.clients)), None)]
    pool_ctx = (
        ProcessPoolExecutor(
            max_workers=cfg.workers,
            mp_context=multiprocessing.get_context("fork"),
        )
        if cfg.workers > 1
        else None
    )
    try:
        for r in range(cfg.rounds):
            result = run_round(server, clients, g_public, fed_cfg, r, cfg.seed, pool_ctx)
            last = r == cfg.rounds - 1
            if last or (r + 1) % cfg.eval_every == 0:
                reports.append(evaluate(r + 1, result.selected, result.mean_local_loss))
    finally:
        if pool_ctx is not None:
            pool_ctx.shutdown()
    return ExperimentResult(reports, server.global_params, clients)
