"""Run configuration: nested dataclasses, JSON files and ``key=value`` overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    dir: str = "data"
    seed: int = 1
    n_total: int = 980
    mpox_fraction: float = 1057 / 2914
    n_mpox: Optional[int] = None
    confound: float = 0.3
    image_size: int = 64
    split_ratios: list = field(default_factory=lambda: [5.0, 1.0, 1.0])
    test_pos_neg: list = field(default_factory=lambda: [4.0, 7.0])


@dataclass
class EncoderSection:
    image_size: int = 64
    patch: int = 8
    dim: int = 128
    depth: int = 4
    heads: int = 4
    mask_ratio: float = 0.75
    dec_dim: int = 64
    dec_depth: int = 2
    dec_heads: int = 4
    contrastive_dim: int = 64


@dataclass
class LmSection:
    dim: int = 128
    depth: int = 2
    heads: int = 4
    max_len: int = 256
    adapter_hidden: int = 128
    lora_rank: int = 4
    lora_alpha: float = 8.0
    lora_targets: list = field(default_factory=lambda: ["q", "v"])


@dataclass
class StageSection:
    steps: int
    batch_size: int
    lr: float
    eval_every: int = 50
    patience: int = 5


def _stages():
    return {
        "mae": StageSection(steps=500, batch_size=32, lr=1.5e-3),
        "classify": StageSection(steps=500, batch_size=32, lr=5e-4),
        "vl": StageSection(steps=500, batch_size=32, lr=1e-3),
        "lm_pretrain": StageSection(steps=1000, batch_size=16, lr=1e-3, eval_every=100),
        "align": StageSection(steps=800, batch_size=8, lr=1e-3, eval_every=100),
        "finetune": StageSection(steps=1500, batch_size=8, lr=1e-3, eval_every=100),
    }


@dataclass
class OptimSection:
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0
    lr_floor: float = 0.0
    min_delta: float = 0.0


@dataclass
class GradcheckSection:
    eps: Optional[float] = None  # None: each fixture's own step
    corrupt: str = ""


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    lm: LmSection = field(default_factory=LmSection)
    stages: dict = field(default_factory=_stages)
    optim: OptimSection = field(default_factory=OptimSection)
    gradcheck: GradcheckSection = field(default_factory=GradcheckSection)
    seeds: list = field(default_factory=lambda: [1, 2, 3])
    row: str = "full"
    out: str = "runs/default"

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """Hash of everything that affects results (output paths excluded)."""
        d = self.to_json()
        d.pop("out")
        d["data"].pop("dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def validate(self) -> "RunConfig":
        from mpoxvlm.eval.rows import ROWS

        if self.row not in ROWS:
            raise ConfigError(f"row: unknown ablation row {self.row!r}; choose from {list(ROWS)}")
        if not self.seeds or any(int(s) < 0 for s in self.seeds):
            raise ConfigError(f"seeds: need a non-empty list of non-negative seeds, got {self.seeds}")
        if not 0.0 < self.data.mpox_fraction < 1.0:
            raise ConfigError(f"data.mpox_fraction must lie in (0, 1), got {self.data.mpox_fraction}")
        if not 0.0 <= self.data.confound <= 1.0:
            raise ConfigError(f"data.confound must lie in [0, 1], got {self.data.confound}")
        if self.data.n_total < 20:
            raise ConfigError(f"data.n_total must be >= 20, got {self.data.n_total}")
        if self.encoder.image_size % self.encoder.patch:
            raise ConfigError(
                f"encoder.image_size {self.encoder.image_size} not divisible by encoder.patch {self.encoder.patch}"
            )
        if not 0.0 <= self.encoder.mask_ratio < 1.0:
            raise ConfigError(f"encoder.mask_ratio must lie in [0, 1), got {self.encoder.mask_ratio}")
        if self.lm.lora_rank < 1:
            raise ConfigError(f"lm.lora_rank must be >= 1, got {self.lm.lora_rank}")
        for name, st in self.stages.items():
            if st.steps < 1 or st.batch_size < 1 or st.lr <= 0 or st.patience < 1 or st.eval_every < 1:
                raise ConfigError(f"stages.{name}: steps, batch_size, lr, eval_every, patience must be positive")
        if self.gradcheck.eps is not None and self.gradcheck.eps <= 0:
            raise ConfigError(f"gradcheck.eps must be positive, got {self.gradcheck.eps}")
        return self


def _coerce(value, current, key):
    if isinstance(current, bool):
        if isinstance(value, bool):
            return value
        if str(value).lower() in ("1", "true", "yes"):
            return True
        if str(value).lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if isinstance(current, int) and not isinstance(value, bool):
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, list):
            if isinstance(value, str):
                value = json.loads(value) if value.startswith("[") else value.split(",")
            if current and isinstance(current[0], (int, float)) and not isinstance(current[0], bool):
                return [type(current[0])(v) for v in value]
            return list(value)
        if current is None:
            if value in (None, "null", "none", "None"):
                return None
            return float(value) if "." in str(value) or "e" in str(value).lower() else int(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{key}: cannot parse {value!r}") from e
    return value


def _apply(obj, data: dict, prefix: str = ""):
    for key, value in data.items():
        path = f"{prefix}{key}"
        if isinstance(obj, dict):
            if key not in obj:
                raise ConfigError(f"unknown config key {path!r}")
            target = obj[key]
        else:
            names = {f.name for f in dataclasses.fields(obj)}
            if key not in names:
                raise ConfigError(f"unknown config key {path!r}")
            target = getattr(obj, key)
        if dataclasses.is_dataclass(target) or isinstance(target, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: expected an object")
            _apply(target, value, path + ".")
            continue
        value = _coerce(value, target, path)
        if isinstance(obj, dict):
            obj[key] = value
        else:
            setattr(obj, key, value)


def set_key(config: RunConfig, dotted: str, value) -> None:
    parts = dotted.split(".")
    nested = value
    for p in reversed(parts):
        nested = {p: nested}
    _apply(config, nested)


def load_config(path=None, overrides=(), env=None) -> RunConfig:
    """Defaults, then the JSON file, then ``key=value`` overrides, then
    ``MPOXVLM_SEED`` (comma-separated) from the environment."""
    config = RunConfig()
    if path:
        try:
            with open(path) as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        _apply(config, data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, value = item.split("=", 1)
        set_key(config, key.strip(), value.strip())
    env = os.environ if env is None else env
    if env.get("MPOXVLM_SEED"):
        set_key(config, "seeds", env["MPOXVLM_SEED"])
    return config.validate()


def describe_keys(config: RunConfig = None) -> list:
    """Flattened ``key = default`` lines for help output."""
    config = config or RunConfig()
    lines = []

    def walk(obj, prefix):
        items = obj.items() if isinstance(obj, dict) else ((f.name, getattr(obj, f.name)) for f in dataclasses.fields(obj))
        for k, v in items:
            if dataclasses.is_dataclass(v) or isinstance(v, dict):
                walk(v, f"{prefix}{k}.")
            else:
                lines.append(f"{prefix}{k} = {json.dumps(v)}")

    walk(config, "")
    return lines
