"""Training configuration and the line-based `key = value` config file format."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

STAGES = ("motion", "codec", "unet", "expert")
COEFF_SOURCES = ("gt", "sampled")


@dataclass
class TrainConfig:
    stage: str = "motion"
    # loss weights
    lambda_exp: float = 1.0
    lambda_pose: float = 1.0
    lambda_sync: float = 0.1
    lambda_rec: float = 1.0
    lambda_per: float = 0.1
    # diffusion / sequence geometry
    T: int = 1000
    steps: int = 50
    F: int = 25
    # optimization
    batch_size: int = 8
    lr: float = 1e-4
    epochs: int = 100
    seed: int = 0
    # ablation arms
    single_transformer: bool = False
    concat_unet_conditions: bool = False
    no_alignment_mask: bool = False
    no_sync_loss: bool = False
    # corpus geometry
    n_clips: int = 4
    num_vertices: int = 40
    mouth_fraction: float = 0.25
    d_alpha: int = 16
    d_beta: int = 64
    d_audio: int = 26
    frame_size: int = 32
    # motion transformer (desk scale)
    width: int = 32
    layers: int = 2
    heads: int = 4
    window_radius: int = 3
    # sync expert
    expert_window: int = 5
    expert_embed: int = 32
    expert_hidden: int = 64
    expert_lr: float = 1e-3
    # latent codec
    codec_d: int = 8
    codec_f: int = 4
    codec_channels: int = 32
    codec_lr: float = 2e-3
    # frame UNet
    unet_c0: int = 32
    unet_c1: int = 64
    unet_lr: float = 1e-3
    stage2_coeff_source: str = "gt"

    def __post_init__(self):
        for name in ("lambda_exp", "lambda_pose", "lambda_sync", "lambda_rec", "lambda_per"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.F < 1:
            raise ValueError("F must be at least 1")
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")
        if self.stage2_coeff_source not in COEFF_SOURCES:
            raise ValueError(f"stage2_coeff_source must be one of {COEFF_SOURCES}")
        if not 1 <= self.steps <= self.T:
            raise ValueError("steps must lie in [1, T]")

    @property
    def effective_lambda_sync(self) -> float:
        return 0.0 if self.no_sync_loss else self.lambda_sync


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(value: str, target_type):
    value = value.strip()
    if target_type is bool:
        low = value.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"cannot parse boolean from {value!r}")
    if target_type is int:
        return int(value)
    if target_type is float:
        return float(value)
    return value


def parse_config_text(text: str) -> dict[str, str]:
    """Parse `key = value` lines; `#` starts a comment, blank lines skipped."""
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected `key = value`, got {raw!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def config_from_mapping(mapping: dict[str, str], base: TrainConfig | None = None) -> TrainConfig:
    base = base or TrainConfig()
    types = {f.name: f.type for f in fields(TrainConfig)}
    pythonic = {"str": str, "int": int, "float": float, "bool": bool}
    values = {f.name: getattr(base, f.name) for f in fields(TrainConfig)}
    for key, raw in mapping.items():
        if key not in values:
            raise ValueError(f"unknown config key {key!r}")
        target = types[key]
        if isinstance(target, str):
            target = pythonic[target]
        values[key] = _coerce(raw, target)
    return TrainConfig(**values)


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    text = Path(path).read_text(encoding="utf-8")
    return config_from_mapping(parse_config_text(text), base=base)
