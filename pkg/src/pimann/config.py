"""Run configuration: a flat key=value text file with typed defaults.

Unknown keys are rejected so typos fail loudly. `model_*` keys override the
corresponding DpuModel field, e.g. `model_plateau_bytes = 512`. The textual
form round-trips losslessly: save(load(path)) reproduces every value.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields

from .dpu_sim import DpuModel
from .errors import ConfigError


@dataclass
class RunConfig:
    # dataset
    base_path: str = ""
    query_path: str = ""
    groundtruth_path: str = ""  # empty = compute by brute force when allowed
    base_kind: str = "f32"
    query_kind: str = "f32"
    max_base_rows: int = 0  # 0 = all rows
    max_query_rows: int = 0
    # index shape
    nclusters: int = 64
    m: int = 16
    kstar: int = 256
    nprobe: int = 8
    k: int = 10
    batch_size: int = 1000
    # device / placement
    ndpu: int = 8
    max_dpu_size: int = 0  # 0 = auto
    threads: int = 11
    buffer_vectors: int = 16
    # co-occurrence re-encoding
    cooccur_enabled: bool = True
    cooccur_m: int = 256
    cooccur_adoption_threshold: float = 0.5
    cooccur_window: int = 4
    # harness knobs
    history_batches: int = 10
    brute_force_cap: int = 2_000_000
    workers: int = 1
    seed: int = 0
    outdir: str = "runs/out"
    # DpuModel overrides, applied on top of the defaults
    model_overrides: dict = field(default_factory=dict)

    def model(self) -> DpuModel:
        return DpuModel().with_overrides(**self.model_overrides)

    def validate(self) -> "RunConfig":
        positive = (
            "nclusters", "m", "kstar", "nprobe", "k", "batch_size", "ndpu",
            "threads", "buffer_vectors", "cooccur_m", "cooccur_window",
            "history_batches", "workers",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("max_base_rows", "max_query_rows", "max_dpu_size", "brute_force_cap"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.kstar > 256:
            raise ConfigError(f"kstar must be <= 256, got {self.kstar}")
        if self.nprobe > self.nclusters:
            raise ConfigError(
                f"nprobe={self.nprobe} exceeds nclusters={self.nclusters}"
            )
        for kind_key in ("base_kind", "query_kind"):
            if getattr(self, kind_key) not in ("f32", "u8", "i32"):
                raise ConfigError(f"{kind_key} must be f32, u8 or i32")
        for path_key in ("base_path", "query_path"):
            path = getattr(self, path_key)
            if not path:
                raise ConfigError(f"{path_key} is required")
            if not os.path.exists(path):
                raise ConfigError(f"{path_key}: no such file: {path}")
        if self.groundtruth_path and not os.path.exists(self.groundtruth_path):
            raise ConfigError(f"groundtruth_path: no such file: {self.groundtruth_path}")
        try:
            self.model()
        except TypeError as exc:
            raise ConfigError(f"bad model override: {exc}") from exc
        return self


_MODEL_FIELDS = {f.name: f.type for f in fields(DpuModel)}
_PLAIN_FIELDS = {
    f.name: type(f.default)
    for f in fields(RunConfig)
    if f.name != "model_overrides"
}


def _parse_value(raw: str, target_type):
    raw = raw.strip()
    if target_type is bool:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    try:
        return target_type(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r} as {target_type.__name__}") from exc


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def from_text(text: str) -> RunConfig:
    cfg = RunConfig()
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key in _PLAIN_FIELDS:
            setattr(cfg, key, _parse_value(raw, _PLAIN_FIELDS[key]))
        elif key.startswith("model_") and key[len("model_"):] in _MODEL_FIELDS:
            model_key = key[len("model_"):]
            default = getattr(DpuModel(), model_key)
            overrides[model_key] = _parse_value(raw, type(default))
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    cfg.model_overrides = overrides
    return cfg


def to_text(cfg: RunConfig) -> str:
    lines = ["# pimann run configuration"]
    for f in dataclasses.fields(RunConfig):
        if f.name == "model_overrides":
            continue
        lines.append(f"{f.name} = {_format_value(getattr(cfg, f.name))}")
    for key in sorted(cfg.model_overrides):
        lines.append(f"model_{key} = {_format_value(cfg.model_overrides[key])}")
    return "\n".join(lines) + "\n"


def load(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return from_text(f.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def save(cfg: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(to_text(cfg))
