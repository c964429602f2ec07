"""Local-update regimes: Baseline, EFNT, EFNT+AT, EFAT.

Each strategy defines which data groups a client trains on and whether those
groups are clean or adversarial:

  baseline  private clean + adversaries of an equally sized private subset
            (budget matched to what public exchange would have provided)
  efnt      private + local public + ensemble public, all clean
  efnt_at   private + adversarial local public + clean ensemble public
  efat      private + adversarial local public + adversarial ensemble public

The training loss is the sum over present groups of that group's mean
cross-entropy, and every minibatch mixes all present groups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Mapping

import numpy as np

from . import nn
from .attacks import AttackConfig, attack_dataset
from .data import Dataset
from .errors import ConfigError, DataError
from .rng import TAG_BASELINE_ADV, TAG_LOCAL_UPDATE, derive_seed, rng_from

if TYPE_CHECKING:
    from .federation import ClientState


class StrategyKind(Enum):
    BASELINE = "baseline"
    EFNT = "efnt"
    EFNT_AT = "efnt_at"
    EFAT = "efat"

    @classmethod
    def from_name(cls, name: str) -> "StrategyKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ConfigError(f"unknown strategy {name!r}; expected one of: {valid}") from None


class Source(str, Enum):
    """Row provenance inside a composed training set."""

    PRIVATE_CLEAN = "private_clean"
    PRIVATE_ADV = "private_adv"
    LOCAL_PUBLIC_CLEAN = "local_public_clean"
    LOCAL_PUBLIC_ADV = "local_public_adv"
    ENSEMBLE_CLEAN = "ensemble_clean"
    ENSEMBLE_ADV = "ensemble_adv"


@dataclass(frozen=True)
class BatchPlan:
    """Rows each minibatch draws from every source group."""

    entries: tuple[tuple[Source, int], ...]

    def __post_init__(self):
        if any(count < 1 for _, count in self.entries):
            raise ConfigError("batch plan counts must be positive")

    @property
    def rows_per_batch(self) -> int:
        return sum(count for _, count in self.entries)


@dataclass
class ComposedSet:
    """Training data grouped by source, in a fixed canonical order."""

    groups: list[tuple[Source, Dataset]]
    baseline_subset: np.ndarray | None = None  # private rows the baseline attacks

    def combined(self) -> Dataset:
        return Dataset.concat([ds for _, ds in self.groups])

    def row_sources(self) -> np.ndarray:
        return np.concatenate(
            [np.full(len(ds), src.value, dtype=object) for src, ds in self.groups]
        )

    def group_arrays(self) -> dict[Source, tuple[np.ndarray, np.ndarray]]:
        return {src: (ds.features, ds.labels) for src, ds in self.groups}

    def total_rows(self) -> int:
        return sum(len(ds) for _, ds in self.groups)

    def replace(self, src: Source, ds: Dataset) -> None:
        for i, (existing, _) in enumerate(self.groups):
            if existing is src:
                self.groups[i] = (src, ds)
                return
        raise KeyError(src)


def make_batch_plan(group_sizes: list[tuple[Source, int]], batch_size: int) -> BatchPlan:
    """Counts proportional to group sizes, each nonempty group >= 1 row.

    If batch_size covers the whole composed set, every batch is a full pass.
    """
    sizes = [(src, n) for src, n in group_sizes if n > 0]
    if not sizes:
        raise DataError("composed training set is empty")
    total = sum(n for _, n in sizes)
    if batch_size >= total:
        return BatchPlan(tuple(sizes))
    if batch_size < len(sizes):
        raise ConfigError(f"batch_size {batch_size} smaller than {len(sizes)} source groups")
    raw = [batch_size * n / total for _, n in sizes]
    counts = [max(1, math.floor(r)) for r in raw]
    while sum(counts) > batch_size:
        over = [i for i, c in enumerate(counts) if c > 1]
        i = max(over, key=lambda j: counts[j] - raw[j])
        counts[i] -= 1
    while sum(counts) < batch_size:
        i = max(range(len(counts)), key=lambda j: raw[j] - counts[j])
        counts[i] += 1
    return BatchPlan(tuple((src, c) for (src, _), c in zip(sizes, counts)))


def _baseline_budget(client: "ClientState", ensemble_budget: int | None) -> int:
    local = len(client.local_public) if client.local_public is not None else 0
    if ensemble_budget is None:
        ensemble_budget = len(client.ensemble_adv) if client.ensemble_adv is not None else 0
    return local + ensemble_budget


def compose_training_set(
    client: "ClientState",
    kind: StrategyKind,
    attack: AttackConfig,
    seed: int,
    batch_size: int,
    ensemble_budget: int | None = None,
    round_idx: int = 0,
) -> tuple[ComposedSet, BatchPlan]:
    """Assemble the client's training groups for one local update.

    Groups a strategy needs but the client does not yet hold (e.g. ensemble
    data before the first exchange) are simply omitted, so training degrades
    to the available terms instead of failing.
    """
    groups: list[tuple[Source, Dataset]] = [(Source.PRIVATE_CLEAN, client.private_data)]
    if kind is StrategyKind.BASELINE:
        budget = min(len(client.private_data), _baseline_budget(client, ensemble_budget))
        if budget > 0:
            rng = rng_from(seed, TAG_BASELINE_ADV, round_idx)
            subset = np.sort(rng.choice(len(client.private_data), size=budget, replace=False))
            adv = attack_dataset(
                client.params,
                client.private_data.subset(subset),
                attack,
                derive_seed(seed, TAG_BASELINE_ADV, round_idx, 0),
            )
            groups.append((Source.PRIVATE_ADV, adv))
            composed = ComposedSet(groups, baseline_subset=subset)
        else:
            composed = ComposedSet(groups)
    else:
        if kind is StrategyKind.EFNT:
            if client.local_public is not None and len(client.local_public):
                groups.append((Source.LOCAL_PUBLIC_CLEAN, client.local_public))
        else:
            if client.local_adv is not None and len(client.local_adv):
                groups.append((Source.LOCAL_PUBLIC_ADV, client.local_adv))
        if kind in (StrategyKind.EFNT, StrategyKind.EFNT_AT):
            if client.ensemble_clean is not None and len(client.ensemble_clean):
                groups.append((Source.ENSEMBLE_CLEAN, client.ensemble_clean))
        else:
            if client.ensemble_adv is not None and len(client.ensemble_adv):
                groups.append((Source.ENSEMBLE_ADV, client.ensemble_adv))
        composed = ComposedSet(groups)
    plan = make_batch_plan([(src, len(ds)) for src, ds in composed.groups], batch_size)
    return composed, plan


def local_loss(params: nn.MlpParams, groups: Mapping[Source, tuple[np.ndarray, np.ndarray]]) -> float:
    """Sum over present source groups of the group's mean cross-entropy."""
    if not groups:
        raise DataError("local_loss needs at least one group")
    total = 0.0
    for feats, labels in groups.values():
        total += nn.cross_entropy(nn.forward(params, feats), labels)
    return total


def _loss_and_grads(
    params: nn.MlpParams, groups: Mapping[Source, tuple[np.ndarray, np.ndarray]]
) -> tuple[float, nn.Gradients]:
    loss = 0.0
    acc: list[list[np.ndarray]] | None = None
    for feats, labels in groups.values():
        g_loss, grads = nn.value_and_grad(params, feats, labels, want_input=False)
        loss += g_loss
        if acc is None:
            acc = [[gw, gb] for gw, gb in grads.layers]
        else:
            for slot, (gw, gb) in zip(acc, grads.layers):
                slot[0] = slot[0] + gw
                slot[1] = slot[1] + gb
    assert acc is not None
    return loss, nn.Gradients([(gw, gb) for gw, gb in acc])


def _batch_groups(
    composed: ComposedSet,
    plan: BatchPlan,
    perms: dict[Source, np.ndarray],
    batch_idx: int,
) -> dict[Source, tuple[np.ndarray, np.ndarray]]:
    out = {}
    counts = dict(plan.entries)
    for src, ds in composed.groups:
        count = counts.get(src)
        if not count:
            continue
        order = perms[src]
        take = np.arange(batch_idx * count, (batch_idx + 1) * count) % order.size
        idx = order[take]
        out[src] = (ds.features[idx], ds.labels[idx])
    return out


def local_update(
    client: "ClientState",
    kind: StrategyKind,
    epochs: int,
    lr: float,
    batch_size: int,
    attack: AttackConfig,
    seed: int,
    round_idx: int = 0,
    ensemble_budget: int | None = None,
) -> "ClientState":
    """Run the strategy's SGD epochs on the client, in place.

    Baseline private adversaries are regenerated against the current params
    at every epoch; exchanged shards are used exactly as received.
    """
    composed, plan = compose_training_set(
        client, kind, attack, seed, batch_size, ensemble_budget, round_idx
    )
    params = client.params
    if epochs == 0:
        client.last_local_loss = local_loss(params, composed.group_arrays())
        return client

    epoch_losses: list[float] = []
    for epoch in range(epochs):
        if kind is StrategyKind.BASELINE and epoch > 0 and composed.baseline_subset is not None:
            fresh = attack_dataset(
                params,
                client.private_data.subset(composed.baseline_subset),
                attack,
                derive_seed(seed, TAG_BASELINE_ADV, round_idx, epoch),
            )
            composed.replace(Source.PRIVATE_ADV, fresh)
        shuffle_rng = rng_from(seed, TAG_LOCAL_UPDATE, round_idx, epoch)
        perms = {src: shuffle_rng.permutation(len(ds)) for src, ds in composed.groups}
        n_batches = math.ceil(composed.total_rows() / plan.rows_per_batch)
        batch_losses = []
        for b in range(n_batches):
            groups = _batch_groups(composed, plan, perms, b)
            loss, grads = _loss_and_grads(params, groups)
            params = nn.sgd_step(params, grads, lr)
            batch_losses.append(loss)
        epoch_losses = batch_losses
    client.params = params
    client.last_local_loss = float(np.mean(epoch_losses))
    return client


def train_plain(
    params: nn.MlpParams,
    ds: Dataset,
    epochs: int,
    lr: float,
    batch_size: int,
    seed: int,
) -> nn.MlpParams:
    """Ordinary minibatch cross-entropy SGD on a single clean dataset."""
    if len(ds) == 0:
        raise DataError("cannot train on an empty dataset")
    for epoch in range(epochs):
        rng = rng_from(seed, TAG_LOCAL_UPDATE, epoch)
        order = rng.permutation(len(ds))
        for start in range(0, len(ds), batch_size):
            idx = order[start : start + batch_size]
            _, grads = nn.value_and_grad(params, ds.features[idx], ds.labels[idx], want_input=False)
            params = nn.sgd_step(params, grads, lr)
    return params
