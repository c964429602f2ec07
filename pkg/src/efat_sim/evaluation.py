"""Black-box evaluation: an independently trained adversary model generates
PGD examples that are transferred to the client/global models.

Adversarial test sets depend only on the adversary, the test data and the
attack config, so they are generated once per experiment and reused across
rounds and target models.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .attacks import AttackConfig, attack_dataset
from .data import Dataset
from .errors import ConfigError, DataError
from .nn import MlpParams, forward, init_params
from .rng import TAG_ADVERSARY, TAG_EVAL_ATTACK, derive_seed
from .strategies import train_plain


def accuracy(params: MlpParams, ds: Dataset) -> float:
    """Fraction of argmax-correct predictions; argmax ties go to the lower
    class index, so the value is deterministic."""
    if len(ds) == 0:
        raise DataError("cannot score an empty dataset")
    pred = np.argmax(forward(params, ds.features), axis=1)
    return float(np.mean(pred == ds.labels))


@dataclass
class MetricsReport:
    """Per-round clean and robust accuracies.

    `averaged` is the exact mean of `per_client` values (client ids in
    ascending order), matching how multi-client accuracy is reported.
    """

    round: int
    adversary: str
    per_client: dict[int, dict[str, float]]
    averaged: dict[str, float]
    global_metrics: dict[str, float]
    mean_local_loss: float | None = None

    @staticmethod
    def average_clients(per_client: dict[int, dict[str, float]]) -> dict[str, float]:
        ids = sorted(per_client)
        keys = list(per_client[ids[0]])
        return {key: sum(per_client[k][key] for k in ids) / len(ids) for key in keys}


def train_adversary(
    held_out: Dataset,
    layer_sizes: list[int],
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 32,
) -> MlpParams:
    """Plain (non-adversarial) training of an external model on data disjoint
    from every client's private set. Uses its own seed stream, so it never
    coincides with a client model."""
    if len(held_out) == 0:
        raise DataError("adversary needs a nonempty training set")
    params = init_params(layer_sizes, derive_seed(seed, TAG_ADVERSARY))
    return train_plain(params, held_out, epochs, lr, batch_size,
                       derive_seed(seed, TAG_ADVERSARY, 1))


def build_attack_suites(
    adversary: MlpParams,
    test: Dataset,
    attacks: Mapping[str, AttackConfig],
    seed: int,
) -> dict[str, Dataset]:
    """Adversarial versions of the test set, one per named attack, generated
    against the adversary's gradients."""
    suites = {}
    for i, (name, cfg) in enumerate(attacks.items()):
        suites[name] = attack_dataset(adversary, test, cfg,
                                      derive_seed(seed, TAG_EVAL_ATTACK, i))
    return suites


def evaluate_model(params: MlpParams, test: Dataset, suites: Mapping[str, Dataset]) -> dict[str, float]:
    metrics = {"clean": accuracy(params, test)}
    for name, adv_set in suites.items():
        metrics[name] = accuracy(params, adv_set)
    return metrics


def evaluate_round(
    round_idx: int,
    models: Mapping[int, MlpParams],
    global_params: MlpParams,
    test: Dataset,
    suites: Mapping[str, Dataset],
    adversary_id: str,
    mean_local_loss: float | None = None,
) -> MetricsReport:
    per_client = {k: evaluate_model(models[k], test, suites) for k in sorted(models)}
    return MetricsReport(
        round=round_idx,
        adversary=adversary_id,
        per_client=per_client,
        averaged=MetricsReport.average_clients(per_client),
        global_metrics=evaluate_model(global_params, test, suites),
        mean_local_loss=mean_local_loss,
    )


def blackbox_eval(
    target: MlpParams,
    adversary: MlpParams,
    test: Dataset,
    attacks: Mapping[str, AttackConfig],
    seed: int,
) -> dict[str, float]:
    """Clean accuracy plus robust accuracy of `target` under transfer attacks
    crafted on `adversary`."""
    suites = build_attack_suites(adversary, test, attacks, seed)
    return evaluate_model(target, test, suites)


@dataclass
class StrategyRow:
    strategy: str
    clean_mean: float
    clean_std: float
    robust: dict[str, tuple[float, float]]  # attack name -> (mean, std)
    per_seed: list[dict[str, float]] = field(default_factory=list)


@dataclass
class ComparisonResult:
    rows: list[StrategyRow]
    attack_names: list[str]
    primary_attack: str
    seeds: list[int]

    @property
    def ranking(self) -> list[str]:
        """Strategies ordered by mean robust accuracy under the primary attack."""
        return [
            row.strategy
            for row in sorted(self.rows, key=lambda r: -r.robust[self.primary_attack][0])
        ]

    def row(self, strategy: str) -> StrategyRow:
        for r in self.rows:
            if r.strategy == strategy:
                return r
        raise KeyError(strategy)

    def to_csv(self) -> str:
        cols = ["strategy", "clean_mean", "clean_std"]
        for name in self.attack_names:
            cols += [f"{name}_mean", f"{name}_std"]
        lines = [",".join(cols)]
        for r in self.rows:
            vals = [r.strategy, f"{r.clean_mean:.6f}", f"{r.clean_std:.6f}"]
            for name in self.attack_names:
                mean, std = r.robust[name]
                vals += [f"{mean:.6f}", f"{std:.6f}"]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        header = ["strategy", "clean"] + self.attack_names
        widths = [max(10, len(h) + 2) for h in header]
        out = ["".join(h.ljust(w) for h, w in zip(header, widths))]
        for r in self.rows:
            cells = [r.strategy, f"{r.clean_mean:.3f}±{r.clean_std:.3f}"]
            cells += [f"{r.robust[n][0]:.3f}±{r.robust[n][1]:.3f}" for n in self.attack_names]
            out.append("".join(c.ljust(w) for c, w in zip(cells, widths)))
        out.append("ranking by %s: %s" % (self.primary_attack, " > ".join(self.ranking)))
        return "\n".join(out) + "\n"


def compare_strategies(base_cfg, strategies: Iterable[str], seeds: Iterable[int]) -> ComparisonResult:
    """Run the experiment per (strategy, seed) and tabulate final-round mean
    and stddev of clean and robust accuracy, plus the induced ranking."""
    from .federation import run_experiment  # local import; federation imports this module

    strategies = list(strategies)
    seeds = [int(s) for s in seeds]
    if len(strategies) < 2:
        raise ConfigError("compare needs at least two strategies")
    if len(seeds) < 3:
        raise ConfigError("compare needs at least three seeds")

    attack_names = list(base_cfg.eval_attacks())
    rows = []
    for strategy in strategies:
        per_seed = []
        for seed in seeds:
            cfg = base_cfg.with_overrides(strategy=str(strategy), seed=seed)
            final = run_experiment(cfg).final
            per_seed.append(dict(final.averaged))
        cleans = np.array([m["clean"] for m in per_seed])
        robust = {
            name: (
                float(np.mean([m[name] for m in per_seed])),
                float(np.std([m[name] for m in per_seed])),
            )
            for name in attack_names
        }
        rows.append(
            StrategyRow(
                strategy=str(strategy),
                clean_mean=float(cleans.mean()),
                clean_std=float(cleans.std()),
                robust=robust,
                per_seed=per_seed,
            )
        )
    return ComparisonResult(rows, attack_names, attack_names[0], seeds)
