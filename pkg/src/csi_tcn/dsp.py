"""Preprocessing chain: per-pair min-max normalization, Butterworth low-pass
filtering along time, and repeated single-level Haar DWT downsampling.

With the defaults (two DWT levels) a 1500-packet recording becomes a
(pairs, 375, subcarriers) float tensor.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import signal as _signal

from .csi_data import CsiFormatError, CsiRecording, amplitude

__all__ = [
    "FilterSpec",
    "IirCoefficients",
    "WaveletSpec",
    "PreprocessedSample",
    "minmax_normalize",
    "design_butterworth_lowpass",
    "apply_filter",
    "dwt_approx",
    "preprocess",
    "save_sample",
    "load_sample",
]

SAMPLE_MAGIC = b"CSP1"
_SAMPLE_HEADER = struct.Struct("<3H")  # pairs, n_p', n_s


@dataclass
class FilterSpec:
    """Low-pass design parameters; `cutoff` is a fraction of Nyquist."""

    order: int = 5
    cutoff: float = 0.1
    zero_phase: bool = False  # forward-backward filtering instead of causal

    def __post_init__(self) -> None:
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")
        if not 0.0 < self.cutoff < 1.0:
            raise ValueError(f"cutoff must be in (0, 1), got {self.cutoff}")


@dataclass
class IirCoefficients:
    """Discrete-time transfer function b(z)/a(z), normalized to a[0] = 1."""

    b: np.ndarray
    a: np.ndarray

    def __post_init__(self) -> None:
        self.b = np.asarray(self.b, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        if self.a.ndim != 1 or self.b.ndim != 1 or len(self.a) == 0:
            raise ValueError("coefficients must be non-empty 1-D sequences")
        if self.a[0] == 0.0:
            raise ValueError("leading denominator coefficient must be nonzero")
        if self.a[0] != 1.0:
            self.b = self.b / self.a[0]
            self.a = self.a / self.a[0]
        if len(self.a) > 1:
            poles = np.roots(self.a)
            if np.any(np.abs(poles) >= 1.0):
                raise ValueError("unstable filter: pole on or outside the unit circle")

    @property
    def dc_gain(self) -> float:
        return float(np.sum(self.b) / np.sum(self.a))


@dataclass
class WaveletSpec:
    """Cascaded single-level DWTs; only the Haar family is implemented."""

    family: str = "haar"
    levels: int = 2

    def __post_init__(self) -> None:
        if self.family != "haar":
            raise ValueError(f"unsupported wavelet family {self.family!r}")
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")


@dataclass
class PreprocessedSample:
    """Real tensor (pairs, packets, subcarriers) after the full chain."""

    data: np.ndarray
    label: Optional[int] = None

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError(f"sample tensor must be 3-D, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("sample tensor contains non-finite values")


def minmax_normalize(x: np.ndarray, pair_axis: int = 0) -> np.ndarray:
    """Map each slice along `pair_axis` to [-1, 1].

    out = 2*(x - min)/(max - min) - 1 over the slice's remaining axes;
    a constant slice maps to all zeros.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    moved = np.moveaxis(x, pair_axis, 0)
    out = np.empty_like(moved)
    for i, sl in enumerate(moved):
        mn = sl.min()
        mx = sl.max()
        if mx == mn:
            out[i] = 0.0
        else:
            out[i] = 2.0 * (sl - mn) / (mx - mn) - 1.0
    return np.moveaxis(out, 0, pair_axis)


def design_butterworth_lowpass(spec: FilterSpec) -> IirCoefficients:
    """Digital Butterworth low-pass via bilinear transform with pre-warping,
    so the magnitude at `cutoff` is exactly 1/sqrt(2)."""
    b, a = _signal.butter(spec.order, spec.cutoff, btype="low", output="ba")
    return IirCoefficients(b=b, a=a)


def apply_filter(
    x: np.ndarray,
    coeffs: IirCoefficients,
    axis: int = -1,
    zero_phase: bool = False,
) -> np.ndarray:
    """Run the IIR recursion along `axis` with zero initial state.

    Default is a single causal pass; `zero_phase=True` selects the
    forward-backward variant (non-causal, squared magnitude response).
    """
    x = np.asarray(x, dtype=np.float64)
    if zero_phase:
        return _signal.filtfilt(coeffs.b, coeffs.a, x, axis=axis)
    return _signal.lfilter(coeffs.b, coeffs.a, x, axis=axis)


def dwt_approx(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Haar approximation half: a[i] = (x[2i] + x[2i+1]) / sqrt(2).

    The detail half is discarded; the length along `axis` must be even.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[axis]
    if n % 2 != 0:
        raise ValueError(f"length along axis {axis} must be even, got {n}")
    moved = np.moveaxis(x, axis, -1)
    approx = (moved[..., 0::2] + moved[..., 1::2]) / np.sqrt(2.0)
    return np.moveaxis(approx, -1, axis)


def preprocess(
    rec: CsiRecording,
    filt: FilterSpec | None = None,
    wav: WaveletSpec | None = None,
    label: Optional[int] = None,
    normalize_first: bool = True,
) -> PreprocessedSample:
    """Full chain: amplitude -> per-pair normalize -> low-pass along time ->
    `wav.levels` Haar approximations along time.

    `normalize_first=False` swaps the first two stages (ablation knob). The
    recording is expected to be gated/trimmed already; the packet count must
    be divisible by 2**levels.
    """
    filt = filt or FilterSpec()
    wav = wav or WaveletSpec()
    coeffs = design_butterworth_lowpass(filt)
    x = amplitude(rec)  # (pairs, n_p, n_s)
    if normalize_first:
        x = minmax_normalize(x, pair_axis=0)
        x = apply_filter(x, coeffs, axis=1, zero_phase=filt.zero_phase)
    else:
        x = apply_filter(x, coeffs, axis=1, zero_phase=filt.zero_phase)
        x = minmax_normalize(x, pair_axis=0)
    for _ in range(wav.levels):
        x = dwt_approx(x, axis=1)
    return PreprocessedSample(data=x, label=label)


def save_sample(sample: PreprocessedSample, path: str | os.PathLike) -> None:
    """Bit-exact container: magic, u16 dims, float64 little-endian payload in
    pair-major / packet / subcarrier order. The label lives in the manifest."""
    pairs, n_p, n_s = sample.data.shape
    for name, v in (("pairs", pairs), ("packets", n_p), ("subcarriers", n_s)):
        if not 0 < v <= 0xFFFF:
            raise ValueError(f"{name} = {v} does not fit the u16 header field")
    with open(path, "wb") as fh:
        fh.write(SAMPLE_MAGIC)
        fh.write(_SAMPLE_HEADER.pack(pairs, n_p, n_s))
        fh.write(np.ascontiguousarray(sample.data, dtype="<f8").tobytes())


def load_sample(path: str | os.PathLike, label: Optional[int] = None) -> PreprocessedSample:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(SAMPLE_MAGIC)] != SAMPLE_MAGIC:
        raise CsiFormatError(
            f"{path}: bad magic {blob[:len(SAMPLE_MAGIC)]!r}, expected {SAMPLE_MAGIC!r}"
        )
    header_end = len(SAMPLE_MAGIC) + _SAMPLE_HEADER.size
    if len(blob) < header_end:
        raise CsiFormatError(f"{path}: truncated header ({len(blob)} bytes)")
    pairs, n_p, n_s = _SAMPLE_HEADER.unpack(blob[len(SAMPLE_MAGIC) : header_end])
    if 0 in (pairs, n_p, n_s):
        raise CsiFormatError(f"{path}: dimension field zero in header")
    expected = 8 * pairs * n_p * n_s
    actual = len(blob) - header_end
    if actual != expected:
        raise CsiFormatError(f"{path}: payload holds {actual} bytes, header implies {expected}")
    data = (
        np.frombuffer(blob, dtype="<f8", offset=header_end)
        .reshape(pairs, n_p, n_s)
        .astype(np.float64)
    )
    return PreprocessedSample(data=data, label=label)
