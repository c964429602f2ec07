"""Experiment configuration: flat key=value sections, strict validation,
canonical snapshots.

Unknown sections or keys are rejected so sweep configs cannot silently
misspell a knob; every range error names the offending key.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import typing
from dataclasses import dataclass

from .attacks import AttackConfig
from .errors import ConfigError
from .strategies import StrategyKind


@dataclass
class ExperimentConfig:
    """Every knob of one experiment run. Defaults describe the toy label-skew
    benchmark at desk scale."""

    # data
    dataset_path: str = ""          # nonempty: load this file instead of blobs
    classes: int = 10
    dim: int = 16
    per_class: int = 100
    spread: float = 0.11
    test_fraction: float = 0.2
    skew: str = "dirichlet"         # dirichlet | feature
    gamma: float = 0.05
    feature_rotation_step: float = 0.2
    feature_brightness_step: float = 0.08
    feature_noise_std: float = 0.02
    public_fraction: float = 0.2
    alpha: float = 0.1

    # federation
    clients: int = 5
    participation: float = 1.0
    rounds: int = 30
    local_epochs: int = 1
    exchange_every: int = 5
    lr: float = 0.25
    batch_size: int = 32
    strategy: str = "efat"
    weighting: str = "by_size"
    warmup_epochs: int = 0
    hidden: tuple[int, ...] = (24,)

    # attack (training-time PGD)
    eps_train: float = 0.1
    step_size: float = 0.025
    iterations: int = 10
    random_start: bool = True

    # eval (black-box test-time attacks)
    eps_test: tuple[float, ...] = (0.1,)
    eval_iterations: tuple[int, ...] = (10, 20)
    eval_step_size: float = 0.025
    eval_random_start: bool = True
    adversary_epochs: int = 40
    eval_every: int = 1

    # run
    seed: int = 1
    workers: int = 1
    out: str = "out"

    def __post_init__(self):
        def require(ok: bool, key: str, rule: str):
            if not ok:
                raise ConfigError(f"{key} {rule} (got {getattr(self, key)!r})")

        require(self.classes >= 2, "classes", "must be >= 2")
        require(self.dim >= 1, "dim", "must be >= 1")
        require(self.per_class >= 1, "per_class", "must be >= 1")
        require(self.spread >= 0, "spread", "must be >= 0")
        require(0 < self.test_fraction < 1, "test_fraction", "must be in (0, 1)")
        require(self.skew in ("dirichlet", "feature"), "skew", "must be dirichlet|feature")
        require(self.gamma > 0, "gamma", "must be > 0")
        require(self.feature_noise_std >= 0, "feature_noise_std", "must be >= 0")
        require(0 < self.public_fraction < 1, "public_fraction", "must be in (0, 1)")
        require(0 < self.alpha <= 1, "alpha", "must be in (0, 1]")
        require(self.clients >= 2, "clients", "must be >= 2")
        require(0 < self.participation <= 1, "participation", "must be in (0, 1]")
        require(int(self.participation * self.clients) >= 1, "participation",
                "must select at least one client")
        require(self.rounds >= 0, "rounds", "must be >= 0")
        require(self.local_epochs >= 0, "local_epochs", "must be >= 0")
        require(self.exchange_every >= 1, "exchange_every", "must be >= 1")
        require(self.lr > 0, "lr", "must be > 0")
        require(self.batch_size >= 1, "batch_size", "must be >= 1")
        StrategyKind.from_name(self.strategy)
        require(self.weighting in ("uniform", "by_size"), "weighting", "must be uniform|by_size")
        require(self.warmup_epochs >= 0, "warmup_epochs", "must be >= 0")
        require(bool(self.hidden) and all(h >= 1 for h in self.hidden), "hidden",
                "must list positive layer widths")
        require(self.eps_train >= 0, "eps_train", "must be >= 0")
        require(self.iterations >= 1, "iterations", "must be >= 1")
        require(bool(self.eps_test), "eps_test", "must list at least one radius")
        require(all(e >= 0 for e in self.eps_test), "eps_test", "radii must be >= 0")
        require(bool(self.eval_iterations) and all(i >= 1 for i in self.eval_iterations),
                "eval_iterations", "must list positive iteration counts")
        require(self.eval_step_size > 0, "eval_step_size", "must be > 0")
        require(self.adversary_epochs >= 0, "adversary_epochs", "must be >= 0")
        require(self.eval_every >= 1, "eval_every", "must be >= 1")
        require(self.seed >= 0, "seed", "must be >= 0")
        require(self.workers >= 1, "workers", "must be >= 1")
        self.attack_config()  # surface step/epsilon mismatches at parse time

    # -- derived objects ---------------------------------------------------

    def layer_sizes(self, in_dim: int, num_classes: int) -> list[int]:
        return [in_dim, *self.hidden, num_classes]

    def attack_config(self) -> AttackConfig:
        step = 0.0 if self.eps_train == 0 else min(self.step_size, self.eps_train)
        return AttackConfig(
            epsilon=self.eps_train,
            step_size=step,
            iterations=self.iterations,
            random_start=self.random_start,
        )

    def eval_attacks(self) -> dict[str, AttackConfig]:
        attacks = {}
        for its in self.eval_iterations:
            for eps in self.eps_test:
                name = f"pgd{its}"
                if len(self.eps_test) > 1:
                    name += f"_eps{eps:g}"
                attacks[name] = AttackConfig(
                    epsilon=eps,
                    step_size=0.0 if eps == 0 else min(self.eval_step_size, eps),
                    iterations=its,
                    random_start=self.eval_random_start,
                )
        return attacks

    def federation_config(self):
        from .federation import FederationConfig  # deferred: federation imports this module

        return FederationConfig(
            num_clients=self.clients,
            participation=self.participation,
            rounds=self.rounds,
            local_epochs=self.local_epochs,
            exchange_every=self.exchange_every,
            lr=self.lr,
            batch_size=self.batch_size,
            alpha=self.alpha,
            strategy=StrategyKind.from_name(self.strategy),
            attack=self.attack_config(),
            weighting=self.weighting,
        )

    def adversary_label(self) -> str:
        return f"external-{self.seed}"

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


# Section layout of the on-disk config format. Field names are globally
# unique, so CLI overrides can use the bare key.
SECTIONS: dict[str, tuple[str, ...]] = {
    "data": (
        "dataset_path", "classes", "dim", "per_class", "spread", "test_fraction",
        "skew", "gamma", "feature_rotation_step", "feature_brightness_step",
        "feature_noise_std", "public_fraction", "alpha",
    ),
    "federation": (
        "clients", "participation", "rounds", "local_epochs", "exchange_every",
        "lr", "batch_size", "strategy", "weighting", "warmup_epochs", "hidden",
    ),
    "attack": ("eps_train", "step_size", "iterations", "random_start"),
    "eval": (
        "eps_test", "eval_iterations", "eval_step_size", "eval_random_start",
        "adversary_epochs", "eval_every",
    ),
    "run": ("seed", "workers", "out"),
}

_KEY_TO_SECTION = {key: section for section, keys in SECTIONS.items() for key in keys}
_FIELD_TYPES = typing.get_type_hints(ExperimentConfig)


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind is str:
            return raw
        if kind == tuple[int, ...]:
            return tuple(int(tok) for tok in raw.split(",") if tok.strip())
        if kind == tuple[float, ...]:
            return tuple(float(tok) for tok in raw.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from exc
    raise ConfigError(f"{key}: unsupported config field type {kind}")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Parse config text; `overrides` maps bare key names to raw strings."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from exc
    kwargs = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            kwargs[key] = _parse_value(key, raw)
    for key, raw in (overrides or {}).items():
        if key not in _KEY_TO_SECTION:
            raise ConfigError(f"unknown config key {key!r}")
        kwargs[key] = _parse_value(key, raw) if isinstance(raw, str) else raw
    return ExperimentConfig(**kwargs)


def parse_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, overrides)


def snapshot(cfg: ExperimentConfig) -> str:
    """Canonical text form; re-parsing it reproduces the config exactly."""
    buf = io.StringIO()
    for section, keys in SECTIONS.items():
        buf.write(f"[{section}]\n")
        for key in keys:
            buf.write(f"{key} = {_format_value(getattr(cfg, key))}\n")
        buf.write("\n")
    return buf.getvalue()
