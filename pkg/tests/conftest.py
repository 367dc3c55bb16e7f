import numpy as np
import pytest

from singvc.config import RunConfig, serialize_config
from singvc.features import write_wav


def synth_voice(freq, seconds=1.0, sr=24000, vibrato_hz=5.0, vibrato_cents=30.0, seed=0):
    """Sine with mild vibrato and an amplitude envelope; sings one note."""
    n = int(seconds * sr)
    t = np.arange(n) / sr
    depth = 2.0 ** (vibrato_cents / 1200.0) - 1.0
    inst_freq = freq * (1.0 + depth * np.sin(2 * np.pi * vibrato_hz * t))
    phase = 2 * np.pi * np.cumsum(inst_freq) / sr
    envelope = 0.3 + 0.2 * np.sin(2 * np.pi * 1.3 * t + seed)
    return (envelope * np.sin(phase)).astype(np.float64)


TEST_CFG = RunConfig(
    n_mels=16,
    ppg_dim=16,
    diffusion_steps=10,
    layers=2,
    channels=8,
    cond_dim=16,
    n_bins=16,
    n_iter=300,
    lr=1e-3,
    seed=3,
    batch=2,
    segment_frames=32,
    log_every=5,
)

SMALL_CFG = RunConfig(**{**TEST_CFG.__dict__, "n_iter": 15, "log_every": 1})


@pytest.fixture(scope="session")
def cli_workspace(tmp_path_factory):
    """Config files plus two 1-second synthetic WAVs."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "run.cfg"
    cfg_path.write_text(serialize_config(TEST_CFG))
    cfg_small = root / "small.cfg"
    cfg_small.write_text(serialize_config(SMALL_CFG))
    wavs = []
    for i, freq in enumerate((220.0, 330.0)):
        path = root / f"utt{i}.wav"
        write_wav(path, synth_voice(freq, seed=i), 24000)
        wavs.append(path)
    return {"root": root, "cfg": cfg_path, "cfg_small": cfg_small, "wavs": wavs}
