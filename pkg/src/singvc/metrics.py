"""Objective conversion metrics: DTW alignment, mel-cepstrum distortion, and
F0 Pearson correlation.

Conventions: cepstra are the orthonormal DCT-II of denormalized log-mel
frames, 13 coefficients kept; coefficient 0 (frame energy) is excluded from
MCD; MCD is averaged over the aligned pairs of the optimal path; FPC is
computed on Hz over frames voiced in both contours.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from .errors import InputError, MetricUndefinedError
from .features import F0Contour

MCD_COEFFS = 13
_MCD_SCALE = 10.0 / math.log(10.0)


@dataclass(frozen=True)
class CepstrumSequence:
    values: np.ndarray  # [frames, n_coeffs]

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_coeffs(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class AlignmentPath:
    """Monotone (i, j) pairs from (0, 0) to (I-1, J-1), steps in
    {(1,0), (0,1), (1,1)}."""

    pairs: list[tuple[int, int]]

    def __len__(self) -> int:
        return len(self.pairs)


def mel_to_cepstrum(log_mel: np.ndarray, n_coeffs: int = MCD_COEFFS) -> CepstrumSequence:
    """Orthonormal DCT-II over the mel axis, first n_coeffs kept."""
    coeffs = dct(np.asarray(log_mel, dtype=np.float64), type=2, norm="ortho", axis=1)
    return CepstrumSequence(values=coeffs[:, :n_coeffs])


def _as_frames(x) -> np.ndarray:
    """1-D sequences are frames of scalars."""
    x = np.asarray(x, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def dtw(a: np.ndarray, b: np.ndarray) -> tuple[AlignmentPath, float]:
    """Minimal-cost monotone alignment under Euclidean frame distance."""
    a = _as_frames(a)
    b = _as_frames(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise InputError(f"dtw inputs must be [frames, D] with equal D: {a.shape} vs {b.shape}")
    ni, nj = a.shape[0], b.shape[0]
    if ni == 0 or nj == 0:
        raise InputError("dtw inputs must be non-empty")

    # local Euclidean costs
    diff = a[:, None, :] - b[None, :, :]
    local = np.sqrt((diff**2).sum(axis=2))

    acc = np.full((ni + 1, nj + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, ni + 1):
        row = acc[i]
        prev = acc[i - 1]
        for j in range(1, nj + 1):
            row[j] = local[i - 1, j - 1] + min(prev[j], row[j - 1], prev[j - 1])

    pairs = [(ni - 1, nj - 1)]
    i, j = ni, nj
    while (i, j) != (1, 1):
        choices = ((acc[i - 1, j - 1], i - 1, j - 1), (acc[i - 1, j], i - 1, j), (acc[i, j - 1], i, j - 1))
        _, i, j = min(choices, key=lambda c: c[0])
        pairs.append((i - 1, j - 1))
    pairs.reverse()
    return AlignmentPath(pairs=pairs), float(acc[ni, nj])


def mcd(ref: CepstrumSequence, hyp: CepstrumSequence) -> float:
    """Mel-cepstrum distortion in dB: coefficients 1..12 aligned with DTW,
    (10/ln 10) * sqrt(2 * sum of squared diffs), averaged over aligned pairs."""
    if ref.n_coeffs != hyp.n_coeffs:
        raise InputError(f"coefficient count mismatch: {ref.n_coeffs} vs {hyp.n_coeffs}")
    r = ref.values[:, 1:]
    h = hyp.values[:, 1:]
    path, _ = dtw(r, h)
    idx_r = np.fromiter((p[0] for p in path.pairs), dtype=np.int64)
    idx_h = np.fromiter((p[1] for p in path.pairs), dtype=np.int64)
    sq = ((r[idx_r] - h[idx_h]) ** 2).sum(axis=1)
    return float(_MCD_SCALE * np.mean(np.sqrt(2.0 * sq)))


def fpc(ref: F0Contour, hyp: F0Contour) -> float:
    """Pearson correlation of Hz values over frames voiced in both contours.

    Inputs are assumed already aligned (equal length).
    """
    if len(ref) != len(hyp):
        raise InputError(f"contour length mismatch: {len(ref)} vs {len(hyp)}")
    both = ref.voiced & hyp.voiced
    if both.sum() < 2:
        raise MetricUndefinedError(f"FPC undefined: only {int(both.sum())} jointly voiced frames")
    x = ref.hz[both]
    y = hyp.hz[both]
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float((xc**2).sum() * (yc**2).sum()))
    if denom == 0.0:
        raise MetricUndefinedError("FPC undefined: a contour is constant over jointly voiced frames")
    return float((xc * yc).sum() / denom)
