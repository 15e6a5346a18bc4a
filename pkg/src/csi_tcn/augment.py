"""Dataset augmentation: value dropout and three-sample mixing.

The primary operators act on preprocessed samples, keep tensor shape and
label, and draw their randomness from explicit generators so expansion is
reproducible and schedule-independent. `expand_recordings` applies the same
operators to raw complex recordings for before/after-pipeline comparisons.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .csi_data import CsiRecording
from .dsp import PreprocessedSample
from .seeding import named_rng

__all__ = [
    "AugmentMethod",
    "AugmentConfig",
    "dropout_augment",
    "mix_samples",
    "mix_other",
    "mix_same",
    "expand_dataset",
    "expand_recordings",
]


class AugmentMethod(enum.Enum):
    DROPOUT = "dropout"
    MIX_OTHER = "mix_other"
    MIX_SAME = "mix_same"


@dataclass
class AugmentConfig:
    dropout_lambda_max: float = 0.07
    mix_epsilon_max: float = 0.05
    methods: tuple[AugmentMethod, ...] = (
        AugmentMethod.DROPOUT,
        AugmentMethod.MIX_OTHER,
        AugmentMethod.MIX_SAME,
    )
    copies_per_method: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.dropout_lambda_max < 1.0:
            raise ValueError("dropout_lambda_max must be in (0, 1)")
        if not 0.0 < self.mix_epsilon_max < 0.5:
            raise ValueError("mix_epsilon_max must be in (0, 0.5)")
        if self.copies_per_method < 1:
            raise ValueError("copies_per_method must be >= 1")
        self.methods = tuple(AugmentMethod(m) for m in self.methods)


def dropout_augment(
    sample: PreprocessedSample,
    rng: np.random.Generator,
    lambda_max: float = 0.07,
    lam: Optional[float] = None,
) -> PreprocessedSample:
    """Zero each scalar independently with probability lambda ~ U(0, lambda_max).

    `lam` overrides the drawn probability (test hook).
    """
    if lam is None:
        lam = rng.uniform(0.0, lambda_max)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"dropout probability {lam} outside [0, 1]")
    keep = rng.random(sample.data.shape) >= lam
    return PreprocessedSample(data=sample.data * keep, label=sample.label)


def mix_samples(
    a: PreprocessedSample,
    b: PreprocessedSample,
    c: PreprocessedSample,
    eps1: float,
    eps2: float,
    eps3: float,
) -> PreprocessedSample:
    """D = A*(1 - eps1) + B*eps2 + C*eps3, inheriting A's label."""
    if not (a.data.shape == b.data.shape == c.data.shape):
        raise ValueError(
            f"shape mismatch: {a.data.shape}, {b.data.shape}, {c.data.shape}"
        )
    for eps in (eps1, eps2, eps3):
        if not 0.0 <= eps < 0.5:
            raise ValueError(f"mixing rate {eps} outside [0, 0.5)")
    mixed = a.data * (1.0 - eps1) + b.data * eps2 + c.data * eps3
    return PreprocessedSample(data=mixed, label=a.label)


def _draw_and_mix(
    donors: Sequence[PreprocessedSample],
    a: PreprocessedSample,
    rng: np.random.Generator,
    epsilon_max: float,
) -> PreprocessedSample:
    # Draw order (B, C, eps1..3) is part of the determinism contract.
    b = donors[int(rng.integers(len(donors)))]
    c = donors[int(rng.integers(len(donors)))]
    eps1, eps2, eps3 = rng.uniform(0.0, epsilon_max, size=3)
    return mix_samples(a, b, c, eps1, eps2, eps3)


def mix_other(
    dataset: Sequence[PreprocessedSample],
    a: PreprocessedSample,
    rng: np.random.Generator,
    epsilon_max: float = 0.05,
) -> PreprocessedSample:
    """Mix `a` with two donors whose labels differ from a's."""
    donors = [s for s in dataset if s.label != a.label]
    if not donors:
        raise ValueError(f"no donor samples with label != {a.label}")
    return _draw_and_mix(donors, a, rng, epsilon_max)


def mix_same(
    dataset: Sequence[PreprocessedSample],
    a: PreprocessedSample,
    rng: np.random.Generator,
    epsilon_max: float = 0.05,
) -> PreprocessedSample:
    """Mix `a` with two other donors sharing a's label."""
    donors = [s for s in dataset if s.label == a.label and s is not a]
    if len(donors) < 2:
        raise ValueError(
            f"need >= 2 other samples with label {a.label}, found {len(donors)}"
        )
    return _draw_and_mix(donors, a, rng, epsilon_max)


def expand_dataset(
    dataset: Sequence[PreprocessedSample], cfg: AugmentConfig
) -> list[PreprocessedSample]:
    """Originals plus, per enabled method, `copies_per_method` new samples for
    every original. RNG streams are keyed per output sample, so the result is
    independent of generation order.
    """
    for s in dataset:
        if s.label is None:
            raise ValueError("expand_dataset requires labelled samples")
    out = list(dataset)
    for m_idx, method in enumerate(cfg.methods):
        for copy in range(cfg.copies_per_method):
            for i, a in enumerate(dataset):
                rng = named_rng(cfg.seed, "augment", m_idx, copy, i)
                if method is AugmentMethod.DROPOUT:
                    out.append(dropout_augment(a, rng, cfg.dropout_lambda_max))
                elif method is AugmentMethod.MIX_OTHER:
                    out.append(mix_other(dataset, a, rng, cfg.mix_epsilon_max))
                else:
                    out.append(mix_same(dataset, a, rng, cfg.mix_epsilon_max))
    return out


# ---------------------------------------------------------------------------
# Raw-domain variant: the same operators applied to complex recordings before
# preprocessing (comparison mode). Mixing happens in float and is rounded back
# into the signed 8-bit grid.


def _rec_to_float(rec: CsiRecording) -> np.ndarray:
    return rec.data.astype(np.float64)


def _float_to_rec(values: np.ndarray, template: CsiRecording) -> CsiRecording:
    quantized = np.clip(np.rint(values), -128, 127).astype(np.int8)
    return CsiRecording(
        n_t=template.n_t,
        n_r=template.n_r,
        n_p=template.n_p,
        n_s=template.n_s,
        data=quantized,
    )


def expand_recordings(
    recordings: Sequence[tuple[CsiRecording, int]], cfg: AugmentConfig
) -> list[tuple[CsiRecording, int]]:
    """`expand_dataset` semantics on (recording, label) pairs.

    Dropout zeroes whole complex values; mixing follows the same three-sample
    rule with the donor-label constraints of each method. All recordings must
    share one shape (gate/trim first).
    """
    if not recordings:
        return []
    shape = recordings[0][0].data.shape
    for rec, _ in recordings:
        if rec.data.shape != shape:
            raise ValueError("recordings must share one shape; gate/trim before augmenting")
    out = list(recordings)
    for m_idx, method in enumerate(cfg.methods):
        for copy in range(cfg.copies_per_method):
            for i, (a, label) in enumerate(recordings):
                rng = named_rng(cfg.seed, "augment_raw", m_idx, copy, i)
                if method is AugmentMethod.DROPOUT:
                    lam = rng.uniform(0.0, cfg.dropout_lambda_max)
                    keep = rng.random(a.data.shape[:-1]) >= lam
                    mixed = _rec_to_float(a) * keep[..., None]
                else:
                    if method is AugmentMethod.MIX_OTHER:
                        donors = [r for r, lb in recordings if lb != label]
                        if not donors:
                            raise ValueError(f"no donor recordings with label != {label}")
                    else:
                        donors = [r for r, lb in recordings if lb == label and r is not a]
                        if len(donors) < 2:
                            raise ValueError(
                                f"need >= 2 other recordings with label {label}"
                            )
                    b = donors[int(rng.integers(len(donors)))]
                    c = donors[int(rng.integers(len(donors)))]
                    eps1, eps2, eps3 = rng.uniform(0.0, cfg.mix_epsilon_max, size=3)
                    mixed = (
                        _rec_to_float(a) * (1.0 - eps1)
                        + _rec_to_float(b) * eps2
                        + _rec_to_float(c) * eps3
                    )
                out.append((_float_to_rec(mixed, a), label))
    return out
