"""Experiment configuration: presets, ``key = value`` files and CLI overrides.

Precedence, lowest first: preset, config file, command-line flags.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .. import neuralnet as nn
from ..datastore import SCHEMES
from ..errors import InvalidArgument
from ..fedcore import FedConfig
from ..kssolver import KSParams

PRESETS: dict[str, dict[str, object]] = {
    # full protocol: 10,000 production samples, 5,000 test samples
    "full": {},
    # 2,500 production samples (2,000 train / 500 val), 1,000 test samples
    "desk": {"t_production": 625.0, "t_test": 250.0, "rounds": 100},
}


@dataclass
class ExperimentConfig:
    # solver
    L: float = 22.0
    N: int = 64
    dt: float = 2.5e-3
    transient_start: float = -250.0
    sample_interval: float = 0.25
    contour_points: int = 32
    seed: int = 0
    dealias: bool = False
    t_production: float = 2500.0
    t_test: float = 1250.0
    # data
    train_fraction: float = 0.8
    scheme: str = "contiguous"
    # model
    latent_dim: int = 8
    hidden_dims: str = "512"
    # training
    K: int = 10
    E: int = 1
    B: int = 32
    central_batch: int = 320
    learning_rate: float = 3e-3
    rounds: int = 500
    optimizer: str = "adam"
    deterministic: bool = True
    participation: float = 1.0
    # harness
    r_sweep: str = "1,2,4,6,8,10,12,16,24,32,48,64"
    output_dir: str = "runs"
    mode: str = "federated"
    transport: str = "inproc"
    listen: str = "127.0.0.1:5757"

    def __post_init__(self):
        if self.mode not in ("central", "federated"):
            raise InvalidArgument(f"mode must be central or federated, got {self.mode!r}")
        if self.transport not in ("inproc", "socket"):
            raise InvalidArgument(f"transport must be inproc or socket, got {self.transport!r}")
        if self.scheme not in SCHEMES:
            raise InvalidArgument(f"scheme must be one of {SCHEMES}")
        if not 1 <= self.latent_dim < self.N:
            raise InvalidArgument("latent_dim must lie in [1, N)")
        for R in self.r_list:
            if not 1 <= R <= self.N:
                raise InvalidArgument(f"R sweep value {R} outside [1, {self.N}]")

    @property
    def r_list(self) -> list[int]:
        return [int(r) for r in str(self.r_sweep).split(",") if r.strip()]

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(int(h) for h in str(self.hidden_dims).split(",") if h.strip())

    def ks_params(self) -> KSParams:
        return KSParams(
            L=self.L,
            N=self.N,
            dt=self.dt,
            transient_start=self.transient_start,
            sample_interval=self.sample_interval,
            M=self.contour_points,
            seed=self.seed,
            dealias=self.dealias,
        )

    def fed_config(self) -> FedConfig:
        return FedConfig(
            K=self.K,
            E=self.E,
            B=self.B,
            learning_rate=self.learning_rate,
            rounds=self.rounds,
            optimizer=self.optimizer,
            seed=self.seed,
            deterministic=self.deterministic,
            participation=self.participation,
        )

    def central_config(self) -> FedConfig:
        return self.fed_config().replace(K=1, B=self.central_batch)

    def architecture(self, latent_dim: int | None = None) -> nn.ArchitectureSpec:
        return nn.ArchitectureSpec(self.N, latent_dim or self.latent_dim, self.hidden)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


def _convert(name: str, raw: str):
    ftype = {f.name: f.type for f in fields(ExperimentConfig)}.get(name)
    if ftype is None:
        raise InvalidArgument(f"unknown config key {name!r}")
    raw = str(raw).strip()
    if ftype == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise InvalidArgument(f"{name}: expected a boolean, got {raw!r}")
    if ftype == "int":
        return int(raw)
    if ftype == "float":
        return float(raw)
    return raw


def parse_config_text(text: str) -> dict[str, object]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InvalidArgument(f"config line {lineno}: expected 'key = value'")
        key = key.strip()
        out[key] = _convert(key, value)
    return out


def build_config(preset: str | None = None, path=None, overrides: dict | None = None) -> ExperimentConfig:
    values: dict[str, object] = {}
    if preset:
        if preset not in PRESETS:
            raise InvalidArgument(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    if path:
        values.update(parse_config_text(Path(path).read_text()))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = _convert(key, value) if isinstance(value, str) else value
    return ExperimentConfig(**values)


def config_fields() -> list[tuple[str, str]]:
    return [(f.name, f.type) for f in fields(ExperimentConfig)]
