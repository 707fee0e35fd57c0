"""Run configuration: one flat JSON document with documented defaults."""

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .container import config_hash
from .datasim import MASK_KINDS, ClientProfile, default_profiles
from .errors import ValidationError
from .federation import FederationConfig
from .metrics import SCENARIOS


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    # data
    image_size: int = 32
    num_clients: int = 3
    samples_per_client: int = 64       # before the train/val/test split
    split_ratios: list = field(default_factory=lambda: [7, 1, 2])
    noise_sigma: float = 0.005
    profiles: list = None              # list of ClientProfile dicts; None -> built-in sites
    heldout_samples: int = 16          # per held-out site (contrast shift, unseen center)
    # acquisition
    mask_kind: str = "random1d"
    acceleration: float = 4.0
    acs_fraction: float = 0.08
    shift_acceleration: float = 6.0    # used by the acceleration_shift scenario
    # model
    cells: int = 3
    nodes: int = 2
    channels: int = 16
    iterations: int = 3
    lambda_init: float = 0.05
    # search phase
    search_rounds: int = 10
    search_local_epochs: int = 5
    lr_alpha: float = 1e-4
    alpha_weight_decay: float = 1e-3
    lr_theta: float = 1e-3
    mix_coeff: float = 1.0
    # training phase
    train_rounds: int = 30
    local_epochs: int = 5
    lr_train: float = 1e-3
    weight_decay: float = 1e-2
    optimizer: str = "adamw"
    gamma: float = 0.1
    fairness_enabled: bool = True
    # execution
    batch_size: int = 4
    eval_batch: int = 16
    workers: int = 1
    dtype: str = "float32"
    checkpoint_every: int = 0          # 0 -> only the final checkpoint
    scenarios: list = field(default_factory=lambda: list(SCENARIOS))

    def __post_init__(self):
        _check_types(self)
        _check_ranges(self)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ValidationError(f"config must be a JSON object, got {type(d).__name__}")
        known = {f.name for f in dataclasses.fields(cls)}
        for key in d:
            if key not in known:
                raise ValidationError(f"unknown config key {key!r}")
        return cls(**d)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def hash(self):
        return config_hash(self.to_dict())

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return RunConfig.from_dict(d)

    def client_profiles(self):
        if self.profiles is None:
            return default_profiles(self.num_clients, self.seed, self.noise_sigma)
        return [ClientProfile.from_dict(p) for p in self.profiles]

    def search_federation(self):
        return FederationConfig(
            num_clients=self.num_clients, rounds=self.search_rounds,
            local_epochs=self.search_local_epochs, lr_alpha=self.lr_alpha, lr_theta=self.lr_theta,
            mix_coeff=self.mix_coeff, gamma=self.gamma, fairness_enabled=self.fairness_enabled,
            batch_size=self.batch_size, master_seed=self.seed,
            alpha_weight_decay=self.alpha_weight_decay, optimizer="adam", workers=self.workers,
            eval_batch=self.eval_batch, dtype=self.dtype)

    def train_federation(self):
        return FederationConfig(
            num_clients=self.num_clients, rounds=self.train_rounds, local_epochs=self.local_epochs,
            lr_theta=self.lr_train, gamma=self.gamma, fairness_enabled=self.fairness_enabled,
            batch_size=self.batch_size, master_seed=self.seed, weight_decay=self.weight_decay,
            optimizer=self.optimizer, workers=self.workers, eval_batch=self.eval_batch,
            dtype=self.dtype)


_FLOAT, _INT, _BOOL, _STR, _LIST = "float", "int", "bool", "str", "list"


def _kind(f):
    t = f.type if isinstance(f.type, str) else f.type.__name__
    return {"float": _FLOAT, "int": _INT, "bool": _BOOL, "str": _STR, "list": _LIST}[t]


def _check_types(cfg):
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        kind = _kind(f)
        if v is None and f.name == "profiles":
            continue
        ok = {
            _BOOL: isinstance(v, bool),
            _INT: isinstance(v, int) and not isinstance(v, bool),
            _FLOAT: isinstance(v, (int, float)) and not isinstance(v, bool),
            _STR: isinstance(v, str),
            _LIST: isinstance(v, (list, tuple)),
        }[kind]
        if not ok:
            raise ValidationError(f"{f.name}: expected {kind}, got {type(v).__name__} ({v!r})")
        if kind == _FLOAT:
            setattr(cfg, f.name, float(v))
        elif kind == _LIST:
            setattr(cfg, f.name, list(v))


def _require(cond, msg):
    if not cond:
        raise ValidationError(msg)


def _check_ranges(c):
    _require(c.seed >= 0, "seed must be >= 0")
    _require(c.image_size >= 16 and c.image_size & (c.image_size - 1) == 0,
             "image_size must be a power of two >= 16")
    _require(c.num_clients >= 1, "num_clients must be >= 1")
    _require(len(c.split_ratios) == 3 and all(isinstance(r, (int, float)) and r > 0 for r in c.split_ratios),
             "split_ratios must be three positive numbers")
    _require(c.samples_per_client >= 3, "samples_per_client must be >= 3")
    _require(c.noise_sigma >= 0, "noise_sigma must be >= 0")
    _require(c.heldout_samples >= 1, "heldout_samples must be >= 1")
    _require(c.mask_kind in MASK_KINDS, f"mask_kind must be one of {MASK_KINDS}")
    _require(c.acceleration >= 1 and c.shift_acceleration >= 1, "accelerations must be >= 1")
    _require(0 < c.acs_fraction < 1, "acs_fraction must be in (0, 1)")
    _require(c.acs_fraction * c.image_size >= 2, "acs_fraction * image_size must be >= 2")
    for name in ("cells", "nodes", "channels", "iterations", "search_local_epochs", "local_epochs",
                 "batch_size", "eval_batch", "workers"):
        _require(getattr(c, name) >= 1, f"{name} must be >= 1")
    for name in ("search_rounds", "train_rounds", "checkpoint_every"):
        _require(getattr(c, name) >= 0, f"{name} must be >= 0")
    for name in ("lambda_init", "lr_alpha", "lr_theta", "lr_train"):
        _require(getattr(c, name) > 0, f"{name} must be > 0")
    for name in ("alpha_weight_decay", "weight_decay", "mix_coeff", "gamma"):
        _require(getattr(c, name) >= 0, f"{name} must be >= 0")
    _require(c.optimizer in ("adam", "adamw", "sgd"), "optimizer must be adam, adamw or sgd")
    _require(c.dtype in ("float32", "float64"), "dtype must be float32 or float64")
    for s in c.scenarios:
        _require(s in SCENARIOS, f"unknown scenario {s!r}; choose from {SCENARIOS}")
    if c.profiles is not None:
        _require(len(c.profiles) == c.num_clients, "profiles must list one entry per client")
        for p in c.profiles:
            try:
                ClientProfile.from_dict(p)
            except (TypeError, ValueError) as e:
                raise ValidationError(f"bad profile {p!r}: {e}") from None


def load_config(path=None, **overrides):
    """Read a JSON config (or start from defaults), apply overrides, validate."""
    d = {}
    if path is not None:
        try:
            with open(path) as f:
                text = f.read()
            d = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(d, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
    d.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(d)


def save_config(cfg, out_dir=None):
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "config.json")
    with open(path, "w") as f:
        f.write(cfg.dumps())
    return path
