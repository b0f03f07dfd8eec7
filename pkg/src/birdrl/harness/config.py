"""Run configuration: every hyperparameter of a training run, loaded from flat JSON."""

import dataclasses
import json
from dataclasses import dataclass

from ..bird import VARIANTS
from ..envs import ENVS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    env: str = "pendulum-swingup"
    image: bool = False
    seed: int = 0
    variant: str = "bird"
    horizon: int = 15
    learn_steps: int = 100  # C
    episode_steps: int = 500  # T, decisions per episode (1000 substeps / action repeat 2)
    batch_size: int = 50  # B
    batch_length: int = 50  # L
    gamma: float = 0.99
    lam: float = 0.95
    beta: float = 1.0
    w_mi: float = 1e-8
    alpha_soft: float = 1e-3
    lr_model: float = 6e-4
    lr_actor: float = 8e-5
    lr_value: float = 8e-5
    grad_clip: float = 100.0
    std_floor: float = 1e-4
    init_std: float = 5.0  # policy std at initialization
    deter: int = 64
    stoch: int = 16
    units: int = 64
    buffer_capacity: int = 100_000
    prefill_episodes: int = 5
    explore_sigma: float = 0.3
    total_episodes: int = 100
    eval_episodes: int = 0  # noise-free evaluation episodes after each training episode
    checkpoint_every: int = 0
    diag_batch_size: int = 64  # sequences behind the per-episode latent error diagnostic

    def __post_init__(self):
        errors = []
        if self.env not in ENVS:
            errors.append(f"env must be one of {sorted(ENVS)}")
        if self.variant not in VARIANTS:
            errors.append(f"variant must be one of {list(VARIANTS)}")
        for name in ("horizon", "learn_steps", "episode_steps", "batch_size", "batch_length",
                     "deter", "stoch", "units", "buffer_capacity", "diag_batch_size"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        for name in ("prefill_episodes", "total_episodes", "eval_episodes", "checkpoint_every"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be >= 0")
        if not 0.0 < self.gamma <= 1.0:
            errors.append("gamma must be in (0, 1]")
        if not 0.0 <= self.lam <= 1.0:
            errors.append("lam must be in [0, 1]")
        for name in ("beta", "w_mi", "alpha_soft", "explore_sigma"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be >= 0")
        for name in ("lr_model", "lr_actor", "lr_value", "grad_clip", "std_floor", "init_std"):
            if not getattr(self, name) > 0:
                errors.append(f"{name} must be > 0")
        if not self.init_std > self.std_floor:
            errors.append("init_std must exceed std_floor")
        if self.prefill_episodes < 1 and self.total_episodes > 0:
            errors.append("prefill_episodes must be >= 1 to train")
        if errors:
            raise ConfigError("; ".join(errors))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, data):
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        clean = {}
        for key, value in data.items():
            kind = known[key].type
            try:
                if kind is bool:
                    if not isinstance(value, bool):
                        raise TypeError
                    clean[key] = value
                elif kind is int:
                    if isinstance(value, bool) or int(value) != value:
                        raise TypeError
                    clean[key] = int(value)
                elif kind is float:
                    clean[key] = float(value)
                else:
                    clean[key] = str(value)
            except (TypeError, ValueError):
                raise ConfigError(f"bad value for {key}: {value!r} (expected {kind.__name__})") from None
        return cls(**clean)


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a flat JSON object")
    return RunConfig.from_dict(data)
