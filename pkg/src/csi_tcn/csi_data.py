"""Raw CSI data model: binary container, manifests, gating, synthetic source.

A recording is the complex channel grid of one trial: `n_t * n_r` transmit/
receive antenna pairs, `n_p` packets, `n_s` subcarriers, each entry a complex
number with signed 8-bit real and imaginary parts. The on-disk container is
bit-exact (see `save_recording` / `load_recording`).
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .seeding import named_rng

__all__ = [
    "LABEL_NAMES",
    "N_CLASSES",
    "CsiFormatError",
    "CsiRecording",
    "ManifestEntry",
    "DatasetManifest",
    "ClassSignature",
    "SyntheticSpec",
    "check_label",
    "load_recording",
    "save_recording",
    "gate_and_trim",
    "amplitude",
    "synthesize_recording",
    "generate_synthetic",
]

# The 12 interaction classes of the human-to-human CSI dataset, in canonical
# order. Class ids index into this tuple.
LABEL_NAMES = (
    "approaching",
    "departing",
    "handshaking",
    "high_five",
    "hugging",
    "kicking_left_leg",
    "kicking_right_leg",
    "pointing_left_hand",
    "pointing_right_hand",
    "punching_left_hand",
    "punching_right_hand",
    "pushing",
)
N_CLASSES = len(LABEL_NAMES)

MAGIC = b"CSI1"
_HEADER = struct.Struct("<4H")  # n_t, n_r, n_p, n_s, little-endian u16


class CsiFormatError(ValueError):
    """Raised when a CSI container file violates the binary format."""


def check_label(label: int, n_classes: int = N_CLASSES) -> int:
    if not 0 <= label < n_classes:
        raise ValueError(f"label {label} outside [0, {n_classes - 1}]")
    return int(label)


@dataclass
class CsiRecording:
    """Complex CSI grid of one trial.

    `data` has shape (n_t * n_r, n_p, n_s, 2), dtype int8; the last axis is
    (re, im). The pair axis is transmitter-major: pair = i * n_r + j for
    transmit antenna i and receive antenna j.
    """

    n_t: int
    n_r: int
    n_p: int
    n_s: int
    data: np.ndarray

    def __post_init__(self) -> None:
        for name in ("n_t", "n_r", "n_p", "n_s"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        expected = (self.n_pairs, self.n_p, self.n_s, 2)
        if self.data.shape != expected:
            raise ValueError(f"data shape {self.data.shape} != expected {expected}")
        if self.data.dtype != np.int8:
            raise ValueError(f"data dtype must be int8, got {self.data.dtype}")

    @property
    def n_pairs(self) -> int:
        return self.n_t * self.n_r

    def pair_index(self, tx: int, rx: int) -> int:
        if not (0 <= tx < self.n_t and 0 <= rx < self.n_r):
            raise ValueError(f"antenna pair ({tx}, {rx}) out of range")
        return tx * self.n_r + rx


def save_recording(rec: CsiRecording, path: str | os.PathLike) -> None:
    """Write the bit-exact container: magic, u16 dims, interleaved i8 pairs."""
    payload = np.ascontiguousarray(rec.data).tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(rec.n_t, rec.n_r, rec.n_p, rec.n_s))
        fh.write(payload)


def load_recording(path: str | os.PathLike) -> CsiRecording:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise CsiFormatError(f"{path}: bad magic {blob[:len(MAGIC)]!r}, expected {MAGIC!r}")
    header_end = len(MAGIC) + _HEADER.size
    if len(blob) < header_end:
        raise CsiFormatError(f"{path}: truncated header ({len(blob)} bytes)")
    n_t, n_r, n_p, n_s = _HEADER.unpack(blob[len(MAGIC) : header_end])
    if 0 in (n_t, n_r, n_p, n_s):
        raise CsiFormatError(
            f"{path}: dimension field zero in header (n_t={n_t}, n_r={n_r}, n_p={n_p}, n_s={n_s})"
        )
    expected = 2 * n_t * n_r * n_p * n_s
    actual = len(blob) - header_end
    if actual != expected:
        raise CsiFormatError(
            f"{path}: payload holds {actual} bytes, header implies {expected}"
        )
    data = (
        np.frombuffer(blob, dtype=np.int8, offset=header_end)
        .reshape(n_t * n_r, n_p, n_s, 2)
        .copy()
    )
    return CsiRecording(n_t=n_t, n_r=n_r, n_p=n_p, n_s=n_s, data=data)


def gate_and_trim(rec: CsiRecording, target_np: int = 1500) -> Optional[CsiRecording]:
    """Standardize the packet count.

    Recordings shorter than `target_np` are discarded (returns None). Longer
    ones lose their excess packets from the front, where the initial steady
    state sits; retained packets keep their order.
    """
    if target_np < 1:
        raise ValueError(f"target_np must be >= 1, got {target_np}")
    if rec.n_p < target_np:
        return None
    if rec.n_p == target_np:
        return rec
    start = rec.n_p - target_np
    return CsiRecording(
        n_t=rec.n_t,
        n_r=rec.n_r,
        n_p=target_np,
        n_s=rec.n_s,
        data=rec.data[:, start:, :, :].copy(),
    )


def amplitude(rec: CsiRecording) -> np.ndarray:
    """Per-entry magnitude sqrt(re^2 + im^2) as float64, shape (pairs, n_p, n_s)."""
    re = rec.data[..., 0].astype(np.float64)
    im = rec.data[..., 1].astype(np.float64)
    return np.hypot(re, im)


# ---------------------------------------------------------------------------
# Dataset manifests


@dataclass
class ManifestEntry:
    path: str
    label: int
    pair_id: int
    trial_id: int


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self, n_classes: int = N_CLASSES) -> None:
        seen: set[str] = set()
        for e in self.entries:
            if e.path in seen:
                raise ValueError(f"duplicate manifest path: {e.path}")
            seen.add(e.path)
            check_label(e.label, n_classes)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def save_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    """One `path,label_id,pair_id,trial_id` line per entry; paths stored
    relative to the manifest location when possible."""
    base = os.path.dirname(os.path.abspath(path))
    lines = []
    for e in manifest.entries:
        p = os.path.abspath(e.path)
        try:
            p = os.path.relpath(p, base)
        except ValueError:
            pass  # different drive on win32; keep absolute
        lines.append(f"{p},{e.label},{e.pair_id},{e.trial_id}\n")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.writelines(lines)


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise CsiFormatError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            rel, label, pair_id, trial_id = parts
            full = rel if os.path.isabs(rel) else os.path.join(base, rel)
            entries.append(
                ManifestEntry(
                    path=full, label=int(label), pair_id=int(pair_id), trial_id=int(trial_id)
                )
            )
    return DatasetManifest(entries=entries)


# ---------------------------------------------------------------------------
# Synthetic data source (desk-scale stand-in for real captures)


@dataclass
class ClassSignature:
    """Deterministic time-frequency fingerprint of one class."""

    freq: float  # amplitude-modulation frequency, cycles per packet
    chirp: float = 0.0  # linear frequency ramp, cycles per packet^2
    burst_center: float = 0.8  # Gaussian bump position, fraction of n_p
    profile_cycles: int = 0  # cosine cycles of the static subcarrier gain profile


@dataclass
class SyntheticSpec:
    """Parameters of the synthetic CSI source.

    Each class gets a distinct amplitude-modulation signature (sinusoid
    frequency, optional chirp/burst, optional static subcarrier gain profile);
    trials add seeded noise and, when enabled, per-trial scale/phase jitter.
    Generation is a pure function of this spec.
    """

    classes: int = N_CLASSES
    samples_per_class: int = 10
    n_t: int = 2
    n_r: int = 3
    n_p: int = 1500
    n_s: int = 30
    freq_min: float = 0.008  # cycles per packet
    freq_max: float = 0.04
    mod_depth: float = 0.35
    profile_depth: float = 0.3
    burst_depth: float = 0.0
    chirp_max: float = 0.0
    base_amplitude: float = 50.0
    noise_amp: float = 2.0
    scale_jitter: float = 0.0  # per-trial amplitude scale ~ U(1-j, 1+j)
    phase_jitter: float = 0.0  # per-trial envelope phase, fraction of a cycle
    seed: int = 0
    signatures: Optional[Sequence[ClassSignature]] = None

    def __post_init__(self) -> None:
        if self.classes < 2:
            raise ValueError(f"classes must be >= 2, got {self.classes}")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        for name in ("n_t", "n_r", "n_p", "n_s"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.signatures is not None and len(self.signatures) != self.classes:
            raise ValueError("signatures length must match classes")

    def signature(self, class_id: int) -> ClassSignature:
        if self.signatures is not None:
            return self.signatures[class_id]
        if self.classes > 1:
            frac = class_id / (self.classes - 1)
        else:
            frac = 0.0
        return ClassSignature(
            freq=self.freq_min + frac * (self.freq_max - self.freq_min),
            chirp=frac * self.chirp_max,
            burst_center=0.6 + 0.35 * frac,
            profile_cycles=class_id + 1,
        )


def synthesize_recording(spec: SyntheticSpec, class_id: int, trial_id: int) -> CsiRecording:
    """One trial of `class_id`, deterministic in (spec, class_id, trial_id)."""
    check_label(class_id, spec.classes)
    sig = spec.signature(class_id)
    rng = named_rng(spec.seed, "synth", class_id, trial_id)

    pairs = spec.n_t * spec.n_r
    t = np.arange(spec.n_p, dtype=np.float64)
    s = np.arange(spec.n_s, dtype=np.float64)
    p = np.arange(pairs, dtype=np.float64)

    scale = 1.0 + spec.scale_jitter * (2.0 * rng.random() - 1.0)
    trial_phase = 2.0 * math.pi * spec.phase_jitter * rng.random()
    carrier_phase = 2.0 * math.pi * spec.phase_jitter * rng.random()

    if spec.profile_depth > 0.0 and sig.profile_cycles > 0:
        gain = 1.0 + spec.profile_depth * np.cos(
            2.0 * math.pi * sig.profile_cycles * s / spec.n_s
        )
    else:
        gain = np.ones(spec.n_s)

    # Modulation phase spread over pairs/subcarriers keeps the 6 x 30 series
    # distinct while sharing the class frequency.
    mod_phase = (
        2.0 * math.pi * (0.13 * p[:, None, None] + 0.07 * s[None, None, :]) + trial_phase
    )
    mod_arg = 2.0 * math.pi * (sig.freq * t + 0.5 * sig.chirp * t * t)
    modulation = spec.mod_depth * np.sin(mod_arg[None, :, None] + mod_phase)

    envelope = 1.0 + modulation
    if spec.burst_depth > 0.0:
        center = sig.burst_center * spec.n_p
        width = 0.05 * spec.n_p
        envelope = envelope + spec.burst_depth * np.exp(
            -0.5 * ((t[None, :, None] - center) / width) ** 2
        )
    envelope = spec.base_amplitude * scale * gain[None, None, :] * envelope

    theta = (
        2.0 * math.pi * (0.21 * t[None, :, None] + 0.11 * s[None, None, :] + 0.05 * p[:, None, None])
        + carrier_phase
    )
    re = envelope * np.cos(theta)
    im = envelope * np.sin(theta)
    if spec.noise_amp > 0.0:
        re = re + spec.noise_amp * rng.standard_normal(re.shape)
        im = im + spec.noise_amp * rng.standard_normal(im.shape)

    quantized = np.rint(np.stack([re, im], axis=-1))
    peak = np.abs(quantized).max()
    if peak > 127:
        raise ValueError(
            f"signature amplitude exceeds signed 8-bit range after quantization (peak {peak:.0f})"
        )
    return CsiRecording(
        n_t=spec.n_t,
        n_r=spec.n_r,
        n_p=spec.n_p,
        n_s=spec.n_s,
        data=quantized.astype(np.int8),
    )


def generate_synthetic(spec: SyntheticSpec, out_dir: str | os.PathLike) -> DatasetManifest:
    """Write one recording per (class, trial) plus `manifest.csv` into `out_dir`.

    Same spec (including seed) always produces bitwise-identical files.
    """
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for c in range(spec.classes):
        for trial in range(spec.samples_per_class):
            rec = synthesize_recording(spec, c, trial)
            name = f"class{c:02d}_trial{trial:03d}.csi"
            path = os.path.join(out_dir, name)
            save_recording(rec, path)
            # 10 trials per subject pair mirrors the acquisition layout of the
            # real dataset; harmless bookkeeping for synthetic data.
            entries.append(
                ManifestEntry(path=path, label=c, pair_id=trial // 10, trial_id=trial)
            )
    manifest = DatasetManifest(entries=entries)
    save_manifest(manifest, os.path.join(out_dir, "manifest.csv"))
    return manifest
