"""Flat key=value run configuration covering features, schedule, model and
training.  Unknown keys are rejected; parse -> serialize -> parse is
idempotent."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .denoiser import ModelConfig
from .errors import ConfigError
from .features import MelConfig


@dataclass(frozen=True)
class RunConfig:
    # features
    sample_rate: int = 24000
    n_fft: int = 1024
    win_size: int = 1024
    hop_size: int = 240
    n_mels: int = 80
    mel_fmin: float = 0.0
    mel_fmax: float = 12000.0
    f0_min: float = 40.0
    f0_max: float = 800.0
    loud_fft: int = 2048
    loud_win: int = 2048
    ppg_dim: int = 218
    # noise schedule
    diffusion_steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.06
    # model
    layers: int = 20
    channels: int = 256
    cond_dim: int = 256
    n_bins: int = 256
    kernel_size: int = 3
    dilation: int = 1
    # training
    n_iter: int = 10000
    lr: float = 2e-4
    seed: int = 0
    batch: int = 16
    segment_frames: int = 128
    log_every: int = 50
    ckpt_every: int = 0
    grad_clip: float = 0.0

    def mel_config(self) -> MelConfig:
        return MelConfig(
            sample_rate=self.sample_rate,
            n_fft=self.n_fft,
            win_size=self.win_size,
            hop_size=self.hop_size,
            n_mels=self.n_mels,
            fmin=self.mel_fmin,
            fmax=self.mel_fmax,
        )

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            n_mels=self.n_mels,
            channels=self.channels,
            layers=self.layers,
            kernel_size=self.kernel_size,
            dilation=self.dilation,
            ppg_dim=self.ppg_dim,
            cond_dim=self.cond_dim,
            n_bins=self.n_bins,
        )


_FIELDS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def parse_config_text(text: str, extra_keys: tuple[str, ...] = ()) -> tuple[RunConfig, dict[str, str]]:
    """Parse key=value lines; returns the config plus any allowed extra keys."""
    values: dict = {}
    extras: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in extras or key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if key in extra_keys:
            extras[key] = value
            continue
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        caster = int if _FIELDS[key] in (int, "int") else float
        try:
            values[key] = caster(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    return RunConfig(**values), extras


def load_config(path) -> RunConfig:
    cfg, _ = parse_config_text(Path(path).read_text(encoding="utf-8"))
    return cfg


def serialize_config(cfg: RunConfig, extras: dict | None = None) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)!r}" for f in dataclasses.fields(RunConfig)]
    for key, value in (extras or {}).items():
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
