"""Synthetic stimuli and rater cohorts for end-to-end validation.

Rater models cover the observed failure modes of crowd submissions
(random, midrange-concentrated, constant) alongside faithful and biased
raters. Noise is Gaussian and applied before clamping to the scale and
quantizing to the 0.1 step, so every emitted rating satisfies the domain
invariants by construction.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence as Vector
from dataclasses import dataclass, field

import numpy as np

from .domain import AUDIO_CATEGORIES, Origin, RatingRecord, Sequence

RATER_KINDS = ("faithful", "biased", "random_uniform", "midrange", "constant")


@dataclass(frozen=True)
class GroundTruthEntry:
    """True quality targets for one synthetic sequence."""

    true_avqa: float
    true_vqa: float
    true_aqa: float
    true_attention: float

    def __post_init__(self) -> None:
        for name, v in (("true_avqa", self.true_avqa), ("true_vqa", self.true_vqa),
                        ("true_aqa", self.true_aqa)):
            if not 1.0 <= v <= 5.0:
                raise ValueError(f"{name}={v} outside [1, 5]")
        if not 0.0 <= self.true_attention <= 100.0:
            raise ValueError(f"true_attention={self.true_attention} outside [0, 100]")


@dataclass(frozen=True)
class RaterModel:
    """Parameters of one synthetic rater behavior."""

    kind: str
    noise_sd: float = 0.3
    offset: float = 0.0
    scale: float = 1.0
    center: float = 3.0
    value: float = 3.0
    attention_noise_sd: float = 5.0

    def __post_init__(self) -> None:
        if self.kind not in RATER_KINDS:
            raise ValueError(f"unknown rater kind {self.kind!r}; expected one of {RATER_KINDS}")

    @classmethod
    def parse(cls, text: str) -> "RaterModel":
        """Parse compact forms like ``faithful``, ``faithful(0.3)``,
        ``biased(0.5,1.0,0.2)``, ``constant(3.0)``."""
        text = text.strip()
        if "(" not in text:
            return cls(kind=text)
        kind, _, rest = text.partition("(")
        args = [float(a) for a in rest.rstrip(")").split(",") if a.strip()]
        if kind == "faithful":
            return cls(kind=kind, noise_sd=args[0])
        if kind == "biased":
            return cls(kind=kind, offset=args[0], scale=args[1] if len(args) > 1 else 1.0,
                       noise_sd=args[2] if len(args) > 2 else 0.0)
        if kind == "midrange":
            return cls(kind=kind, noise_sd=args[0])
        if kind == "constant":
            return cls(kind=kind, value=args[0])
        return cls(kind=kind)

    def describe(self) -> str:
        if self.kind == "faithful":
            return f"faithful({self.noise_sd})"
        if self.kind == "biased":
            return f"biased({self.offset},{self.scale},{self.noise_sd})"
        if self.kind == "midrange":
            return f"midrange({self.noise_sd})"
        if self.kind == "constant":
            return f"constant({self.value})"
        return self.kind


GroundTruth = Mapping[str, GroundTruthEntry]


@dataclass(frozen=True)
class QualityDistribution:
    """Shape of the true-quality marginals for synthetic catalogs."""

    kind: str = "gaussian"  # gaussian | uniform | skewed
    mu: tuple[float, float, float] = (3.47, 3.49, 3.44)
    sd: tuple[float, float, float] = (0.72, 0.77, 0.64)
    beta_a: float = 2.0
    beta_b: float = 8.0

    def draw(self, rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
        if self.kind == "gaussian":
            return np.clip(rng.normal(self.mu[dim], self.sd[dim], n), 1.0, 5.0)
        if self.kind == "uniform":
            return rng.uniform(1.0, 5.0, n)
        if self.kind == "skewed":
            return 1.0 + 4.0 * rng.beta(self.beta_a, self.beta_b, n)
        raise ValueError(f"unknown distribution kind {self.kind!r}")


def _correlated(rng: np.random.Generator, base: np.ndarray, corr: float) -> np.ndarray:
    """Unit-interval scores with Pearson correlation ~``corr`` to ``base``."""
    z = (base - base.mean()) / (base.std() or 1.0)
    mixed = corr * z + math.sqrt(max(0.0, 1.0 - corr * corr)) * rng.normal(0.0, 1.0, len(base))
    lo, hi = mixed.min(), mixed.max()
    if hi == lo:
        return np.full(len(base), 0.5)
    return (mixed - lo) / (hi - lo)


def synth_catalog(
    n_sequences: int,
    distribution: QualityDistribution = QualityDistribution(),
    seed: int = 0,
    pseudo_label_corr: float = 0.7,
    attention_mu: float = 50.0,
    attention_sd: float = 4.32,
) -> tuple[list[Sequence], dict[str, GroundTruthEntry]]:
    """Deterministic synthetic catalog with ground-truth quality.

    Pseudo-labels are correlated with the matching ground-truth dimension
    (audio labels with true audio quality, the video label with true
    video quality) so the sampler sees realistic inputs.
    """
    if n_sequences < 1:
        raise ValueError("n_sequences must be >= 1")
    rng = np.random.default_rng(seed)
    true_avqa = distribution.draw(rng, n_sequences, 0)
    true_vqa = distribution.draw(rng, n_sequences, 1)
    true_aqa = distribution.draw(rng, n_sequences, 2)
    attention = np.clip(rng.normal(attention_mu, attention_sd, n_sequences), 0.0, 100.0)
    if n_sequences >= 2:
        pq = _correlated(rng, true_aqa, pseudo_label_corr)
        ce = _correlated(rng, true_aqa, pseudo_label_corr)
        vq = _correlated(rng, true_vqa, pseudo_label_corr)
    else:
        pq = ce = vq = np.array([0.5])
    subset_choices = _all_subsets()
    picks = rng.integers(0, len(subset_choices), n_sequences)
    sequences = []
    truth: dict[str, GroundTruthEntry] = {}
    for i in range(n_sequences):
        sid = f"seq-{i:05d}"
        sequences.append(
            Sequence(
                id=sid,
                group_id="",
                duration_s=10.0,
                width=1920,
                height=1080,
                audio_semantics=subset_choices[picks[i]],
                pseudo_audio_pq=float(pq[i]),
                pseudo_audio_ce=float(ce[i]),
                pseudo_video_q=float(vq[i]),
                origin=Origin.SAMPLED,
            )
        )
        truth[sid] = GroundTruthEntry(
            true_avqa=float(true_avqa[i]),
            true_vqa=float(true_vqa[i]),
            true_aqa=float(true_aqa[i]),
            true_attention=float(attention[i]),
        )
    return sequences, truth


def _all_subsets() -> list[frozenset[str]]:
    cats = AUDIO_CATEGORIES
    out = []
    for mask in range(1, 8):
        out.append(frozenset(c for i, c in enumerate(cats) if mask >> i & 1))
    return out


def _clamp_quantize(value: float) -> int:
    """Clamp to [1, 5] then quantize to integer tenths."""
    return int(round(min(5.0, max(1.0, value)) * 10.0))


def _clamp_pct(value: float) -> int:
    return int(round(min(100.0, max(0.0, value))))


def simulate_rater(
    model: RaterModel,
    truth: GroundTruth,
    sequences: Vector[str],
    rng: np.random.Generator,
) -> list[RatingRecord]:
    """Emit one rating record per sequence according to the model."""
    records = []
    for sid in sequences:
        t = truth[sid]
        if model.kind == "faithful":
            q = [t.true_avqa, t.true_vqa, t.true_aqa]
            vals = [v + rng.normal(0.0, model.noise_sd) for v in q]
            att = t.true_attention + rng.normal(0.0, model.attention_noise_sd)
        elif model.kind == "biased":
            q = [t.true_avqa, t.true_vqa, t.true_aqa]
            vals = [model.offset + model.scale * v + rng.normal(0.0, model.noise_sd) for v in q]
            att = t.true_attention + rng.normal(0.0, model.attention_noise_sd)
        elif model.kind == "random_uniform":
            vals = list(rng.uniform(1.0, 5.0, 3))
            att = rng.uniform(0.0, 100.0)
        elif model.kind == "midrange":
            vals = [model.center + rng.normal(0.0, model.noise_sd) for _ in range(3)]
            att = rng.uniform(0.0, 100.0)
        else:  # constant
            vals = [model.value] * 3
            att = rng.uniform(0.0, 100.0)
        records.append(
            RatingRecord(
                sequence_id=sid,
                q1_tenths=_clamp_quantize(vals[0]),
                q2_tenths=_clamp_quantize(vals[1]),
                q3_tenths=_clamp_quantize(vals[2]),
                audio_attention_pct=_clamp_pct(att),
            )
        )
    return records
