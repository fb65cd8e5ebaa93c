"""Stimulus-set curation: stratified sampling with soft bin balancing.

The candidate pool is split by audio-semantic subset; each subset gets a
quota from target ratios (single categories weighted 2, combinations 1).
Within a subset, each of the three continuous pseudo-quality features is
discretized into equal-width bins and per-bin weights (uniform/empirical)
raised to the balancing strength ``alpha`` gently lift underrepresented
bins; per-feature sample weights are combined by product. The union of
the per-subset draws forms the intermediate set, from which the final
set is drawn uniformly.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Mapping, Sequence as Vector
from dataclasses import dataclass, field

import numpy as np

from .domain import SEMANTIC_SUBSETS, Sequence

logger = logging.getLogger(__name__)

FEATURES = ("pq", "ce", "vq")


def default_group_ratios() -> dict[str, float]:
    """Single categories weighted 2, combinations 1, normalized to sum 1."""
    raw = {key: 2.0 if "+" not in key else 1.0 for key in SEMANTIC_SUBSETS}
    total = sum(raw.values())
    return {key: w / total for key, w in raw.items()}


@dataclass(frozen=True)
class SamplingPlan:
    alpha: float = 0.3
    n_bins: int = 8
    group_ratios: Mapping[str, float] = field(default_factory=default_group_ratios)
    intermediate_n: int = 10_000
    final_n: int = 1_296
    seed: int = 0
    no_balancing: bool = False  # plain proportional sampling within groups

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        if self.final_n > self.intermediate_n:
            raise ValueError("final_n must not exceed intermediate_n")
        total = sum(self.group_ratios.values())
        if not math.isclose(total, 1.0, abs_tol=1e-9):
            object.__setattr__(
                self,
                "group_ratios",
                {k: v / total for k, v in self.group_ratios.items()},
            )


def _soft_bin_weights(
    values: np.ndarray, n_bins: int, alpha: float
) -> tuple[np.ndarray, np.ndarray]:
    """Normalized per-bin soft-balance weights and each value's bin index.

    Equal-width bins over [min, max]; non-empty bin i with empirical
    probability p_i = count_i / N gets raw weight (u_i / p_i)^alpha,
    u_i = 1 / n_bins, normalized over non-empty bins to sum 1.
    """
    if values.size == 0:
        raise ValueError("values must be non-empty")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        # single occupied bin
        return np.array([1.0]), np.zeros(values.size, dtype=int)
    edges = np.linspace(lo, hi, n_bins + 1)
    # rightmost edge closes the last bin
    idx = np.clip(np.digitize(values, edges[1:-1], right=False), 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    occupied = counts > 0
    p = counts / values.size
    u = 1.0 / n_bins
    raw = np.zeros(n_bins)
    raw[occupied] = (u / p[occupied]) ** alpha
    return raw / raw.sum(), idx


def bin_weights(values: Vector[float], n_bins: int, alpha: float) -> np.ndarray:
    """Per-sample weight vector of the soft-balanced distribution.

    Each non-empty bin's normalized weight (see :func:`_soft_bin_weights`)
    is shared equally by the bin's samples, so the returned weights sum
    to 1. All values identical is not an error: the single occupied bin
    makes every sample uniformly weighted.
    """
    v = np.asarray(values, dtype=float)
    w_bin, idx = _soft_bin_weights(v, n_bins, alpha)
    counts = np.bincount(idx, minlength=len(w_bin))
    return w_bin[idx] / counts[idx]


def sample_draw_weights(values: Vector[float], n_bins: int, alpha: float) -> np.ndarray:
    """Per-sample draw weights: every sample carries its bin's weight.

    Drawing proportionally to these gives bin masses count_i * w_i,
    i.e. proportional to p_i^(1 - alpha): alpha = 0 reproduces plain
    proportional sampling (no balancing) and larger alpha flattens the
    sampled bin distribution monotonically.
    """
    v = np.asarray(values, dtype=float)
    w_bin, idx = _soft_bin_weights(v, n_bins, alpha)
    return w_bin[idx]


def allocate_quotas(
    ratios: Mapping[str, float], total: int, order: Vector[str] = SEMANTIC_SUBSETS
) -> dict[str, int]:
    """Largest-remainder apportionment of ``total`` across groups.

    Remainder ties are broken by the fixed subset ordering so the result
    is deterministic.
    """
    keys = [k for k in order if k in ratios] + [k for k in ratios if k not in order]
    raw = {k: ratios[k] * total for k in keys}
    base = {k: int(math.floor(raw[k])) for k in keys}
    short = total - sum(base.values())
    by_remainder = sorted(
        keys, key=lambda k: (-(raw[k] - base[k]), keys.index(k))
    )
    for k in by_remainder[:short]:
        base[k] += 1
    return base


def _redistribute_shortfall(
    quotas: dict[str, int], capacities: Mapping[str, int], ratios: Mapping[str, float]
) -> dict[str, int]:
    """Cap quotas at group capacity, pushing the deficit onto groups with
    room, proportionally to their target ratios."""
    quotas = dict(quotas)
    deficit = 0
    for k in quotas:
        cap = capacities.get(k, 0)
        if quotas[k] > cap:
            logger.warning(
                "group %s smaller than its quota (%d < %d); redistributing",
                k, cap, quotas[k],
            )
            deficit += quotas[k] - cap
            quotas[k] = cap
    while deficit > 0:
        room = {
            k: capacities.get(k, 0) - quotas[k]
            for k in quotas
            if capacities.get(k, 0) > quotas[k]
        }
        if not room:
            logger.warning("pool exhausted; %d below target", deficit)
            break
        weights = {k: ratios.get(k, 0.0) for k in room}
        total_w = sum(weights.values())
        if total_w == 0:
            weights = {k: 1.0 for k in room}
            total_w = float(len(room))
        extra = allocate_quotas(
            {k: w / total_w for k, w in weights.items()},
            min(deficit, sum(room.values())),
        )
        added = 0
        for k, v in extra.items():
            inc = min(v, room[k])
            quotas[k] += inc
            added += inc
        if added == 0:
            break
        deficit -= added
    return quotas


def weighted_sample_without_replacement(
    n_items: int, k: int, weights: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Indices of k items drawn without replacement, proportionally to
    ``weights`` (Efraimidis-Spirakis keys, equivalent to iterative
    weighted draws)."""
    if k > n_items:
        raise ValueError(f"cannot draw {k} from {n_items}")
    if k == n_items:
        return np.arange(n_items)
    keys = np.log(rng.random(n_items)) / weights
    return np.argpartition(keys, -k)[-k:]


@dataclass(frozen=True)
class SampleResult:
    selected: tuple[Sequence, ...]
    intermediate: tuple[Sequence, ...]
    quotas: Mapping[str, int]
    shortfalls: Mapping[str, int]


def stratified_sample(pool: Iterable[Sequence], plan: SamplingPlan) -> SampleResult:
    """Draw ``plan.final_n`` sequences from the pool.

    Step 1: split the pool by semantic subset and allocate quotas summing
    to ``intermediate_n``. Step 2: within each subset, combine the three
    per-feature soft-balance weights by product and draw the quota
    without replacement. Step 3: merge and draw ``final_n`` uniformly.
    Deterministic for a fixed pool, plan, and seed.
    """
    rng = np.random.default_rng(plan.seed)
    by_group: dict[str, list[Sequence]] = {key: [] for key in SEMANTIC_SUBSETS}
    for seq in pool:
        by_group[seq.semantics].append(seq)

    quotas = allocate_quotas(plan.group_ratios, plan.intermediate_n)
    capacities = {key: len(members) for key, members in by_group.items()}
    final_quotas = _redistribute_shortfall(quotas, capacities, plan.group_ratios)
    shortfalls = {
        key: quotas[key] - final_quotas[key]
        for key in quotas
        if final_quotas[key] < quotas[key]
    }

    intermediate: list[Sequence] = []
    for key in SEMANTIC_SUBSETS:
        members = by_group[key]
        quota = final_quotas.get(key, 0)
        if quota == 0 or not members:
            continue
        if plan.no_balancing:
            weights = np.full(len(members), 1.0 / len(members))
        else:
            per_feature = [
                sample_draw_weights(
                    [getattr_feature(s, f) for s in members], plan.n_bins, plan.alpha
                )
                for f in FEATURES
            ]
            combined = per_feature[0] * per_feature[1] * per_feature[2]
            weights = combined / combined.sum()
        chosen = weighted_sample_without_replacement(len(members), quota, weights, rng)
        intermediate.extend(members[i] for i in sorted(chosen))

    if len(intermediate) < plan.final_n:
        raise ValueError(
            f"pool too small: intermediate set has {len(intermediate)} "
            f"sequences, final_n={plan.final_n}"
        )
    final_idx = rng.choice(len(intermediate), size=plan.final_n, replace=False)
    selected = tuple(intermediate[i] for i in sorted(final_idx))
    return SampleResult(
        selected=selected,
        intermediate=tuple(intermediate),
        quotas=final_quotas,
        shortfalls=shortfalls,
    )


def getattr_feature(seq: Sequence, feature: str) -> float:
    return {
        "pq": seq.pseudo_audio_pq,
        "ce": seq.pseudo_audio_ce,
        "vq": seq.pseudo_video_q,
    }[feature]


def _entropy(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())


def diversity_report(
    selected: Iterable[Sequence],
    pool: Iterable[Sequence],
    plan: SamplingPlan,
) -> dict:
    """Before/after feature histograms, entropies, and realized semantic
    ratios, as a JSON-ready dict (``summary`` holds the human-readable
    form)."""
    sel = list(selected)
    full = list(pool)
    report: dict = {"n_pool": len(full), "n_selected": len(sel), "features": {}, "semantics": {}}
    lines = [f"pool={len(full)} selected={len(sel)}"]
    for f in FEATURES:
        pool_vals = np.array([getattr_feature(s, f) for s in full], dtype=float)
        sel_vals = np.array([getattr_feature(s, f) for s in sel], dtype=float)
        if pool_vals.size == 0:
            lo, hi = 0.0, 1.0
        else:
            lo, hi = float(pool_vals.min()), float(pool_vals.max())
            if lo == hi:
                hi = lo + 1.0
        edges = np.linspace(lo, hi, plan.n_bins + 1)
        before = np.histogram(pool_vals, bins=edges)[0] if pool_vals.size else np.zeros(plan.n_bins, dtype=int)
        after = np.histogram(sel_vals, bins=edges)[0] if sel_vals.size else np.zeros(plan.n_bins, dtype=int)
        report["features"][f] = {
            "bin_edges": edges.tolist(),
            "before_counts": before.tolist(),
            "after_counts": after.tolist(),
            "before_entropy": _entropy(before),
            "after_entropy": _entropy(after),
            "before_range": [lo, hi] if pool_vals.size else None,
            "after_range": [float(sel_vals.min()), float(sel_vals.max())] if sel_vals.size else None,
        }
        lines.append(
            f"{f}: entropy {report['features'][f]['before_entropy']:.4f} -> "
            f"{report['features'][f]['after_entropy']:.4f}"
        )
    for key in SEMANTIC_SUBSETS:
        n_sel = sum(1 for s in sel if s.semantics == key)
        n_pool = sum(1 for s in full if s.semantics == key)
        report["semantics"][key] = {
            "pool_count": n_pool,
            "selected_count": n_sel,
            "selected_ratio": (n_sel / len(sel)) if sel else 0.0,
            "target_ratio": plan.group_ratios.get(key, 0.0),
        }
        lines.append(
            f"{key}: {n_sel} selected "
            f"({report['semantics'][key]['selected_ratio']:.4f} vs "
            f"target {plan.group_ratios.get(key, 0.0):.4f})"
        )
    report["summary"] = "\n".join(lines)
    return report
