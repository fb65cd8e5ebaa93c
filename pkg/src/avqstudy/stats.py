"""Rank correlation, dispersion, MOS aggregation, and the dynamic
submission filter.

All operations are pure functions of their inputs. SROCC is the Pearson
correlation of fractional (average-tie) ranks; a constant vector has no
ranking information, so its correlation is undefined (NaN) and the filter
maps it to 0. Dispersion is the sample standard deviation (n-1 divisor).
A submission is accepted when both its average SROCC against the group
consensus and its average rating dispersion strictly exceed the
thresholds.
"""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Collection, Iterable, Sequence as Vector
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .domain import (
    DIMENSIONS,
    FilterThresholds,
    MosEntry,
    MosTable,
    Sequence,
    Submission,
    Verdict,
)
from .errors import ScoringError


def fractional_ranks(values: Vector[float]) -> np.ndarray:
    """Ranks 1..n with ties sharing the average of their positions."""
    v = np.asarray(values, dtype=float)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v), dtype=float)
    i = 0
    n = len(v)
    while i < n:
        j = i
        while j + 1 < n and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def srocc(x: Vector[float], y: Vector[float]) -> float:
    """Spearman rank-order correlation of two equal-length vectors.

    Returns NaN when either vector is constant (correlation undefined);
    raises ValueError on length mismatch or fewer than two elements.
    """
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ValueError("need at least 2 elements")
    rx = fractional_ranks(x)
    ry = fractional_ranks(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    vx = float(np.dot(dx, dx))
    vy = float(np.dot(dy, dy))
    if vx == 0.0 or vy == 0.0:
        return math.nan
    r = float(np.dot(dx, dy)) / math.sqrt(vx * vy)
    return min(1.0, max(-1.0, r))


def dispersion(x: Vector[float]) -> float:
    """Sample standard deviation (divisor n-1) of a vector of length >= 2."""
    if len(x) < 2:
        raise ValueError("need at least 2 elements")
    return float(np.std(np.asarray(x, dtype=float), ddof=1))


def compute_mos(
    submissions: Iterable[Submission],
    sequences: Collection[Sequence] | None = None,
) -> MosTable:
    """Arithmetic-mean opinion scores per sequence and dimension.

    Sequences with zero ratings are omitted. When ``sequences`` is given,
    a rating referencing an unknown sequence raises ValueError.
    """
    known = {s.id for s in sequences} if sequences is not None else None
    sums: dict[str, list[float]] = {}
    counts: dict[str, int] = {}
    for sub in submissions:
        for rec in sub.records:
            sid = rec.sequence_id
            if known is not None and sid not in known:
                raise ValueError(f"rating references unknown sequence {sid!r}")
            acc = sums.setdefault(sid, [0.0, 0.0, 0.0, 0.0])
            acc[0] += rec.q1_avqa
            acc[1] += rec.q2_av_vqa
            acc[2] += rec.q3_av_aqa
            acc[3] += rec.audio_attention_pct
            counts[sid] = counts.get(sid, 0) + 1
    entries = {
        sid: MosEntry(
            mos_avqa=acc[0] / counts[sid],
            mos_av_vqa=acc[1] / counts[sid],
            mos_av_aqa=acc[2] / counts[sid],
            mean_audio_attention_pct=acc[3] / counts[sid],
            n_ratings=counts[sid],
        )
        for sid, acc in sums.items()
    }
    return MosTable(entries=entries)


class RejectReason(str, Enum):
    LOW_SROCC = "low_srocc"
    LOW_STD = "low_std"
    LOW_SROCC_AND_STD = "low_srocc_and_std"
    TOO_FEW_OVERLAPPING = "too_few_overlapping"


_REASON_TO_VERDICT = {
    None: Verdict.ACCEPTED,
    RejectReason.LOW_SROCC: Verdict.REJECTED_SROCC,
    RejectReason.LOW_SROCC_AND_STD: Verdict.REJECTED_SROCC,
    RejectReason.LOW_STD: Verdict.REJECTED_STD,
    RejectReason.TOO_FEW_OVERLAPPING: Verdict.REJECTED_INVALID,
}


@dataclass(frozen=True)
class FilterOutcome:
    """Per-submission scoring result against the group consensus.

    An undefined per-dimension SROCC (constant rating vector) is stored
    as 0.0 so that a constant rater fails the ranking criterion; the
    averages are always the arithmetic means of the stored triples.
    """

    submission_id: str
    avg_srocc: float
    avg_std: float
    per_dimension_srocc: tuple[float, float, float]
    per_dimension_std: tuple[float, float, float]
    accepted: bool
    reject_reason: RejectReason | None = None

    @property
    def verdict(self) -> Verdict:
        return _REASON_TO_VERDICT[self.reject_reason]


def score_submission(
    sub: Submission,
    reference: MosTable,
    thresholds: FilterThresholds = FilterThresholds(),
) -> FilterOutcome:
    """Score one submission's ranking consistency and rating dispersion.

    Per dimension, the submission's ratings for sequences present in the
    reference are correlated (SROCC) against the reference scores, and
    their sample standard deviation is taken; both are averaged over the
    three dimensions with equal weights. Sequences absent from the
    reference are dropped from the comparison vectors.

    Raises ScoringError when fewer than two of the submission's
    sequences overlap the reference.
    """
    overlap = [rec for rec in sub.records if rec.sequence_id in reference]
    if len(overlap) < 2:
        raise ScoringError(
            f"submission {sub.submission_id}: only {len(overlap)} sequences "
            "overlap the reference table (need >= 2)"
        )
    own = {
        "avqa": [r.q1_avqa for r in overlap],
        "av_vqa": [r.q2_av_vqa for r in overlap],
        "av_aqa": [r.q3_av_aqa for r in overlap],
    }
    ref = {
        dim: [reference[r.sequence_id].score(dim) for r in overlap]
        for dim in DIMENSIONS
    }
    sroccs = []
    stds = []
    for dim in DIMENSIONS:
        rho = srocc(own[dim], ref[dim])
        sroccs.append(0.0 if math.isnan(rho) else rho)
        stds.append(dispersion(own[dim]))
    avg_srocc = sum(sroccs) / 3.0
    avg_std = sum(stds) / 3.0
    srocc_ok = avg_srocc > thresholds.srocc_min
    std_ok = avg_std > thresholds.std_min
    if srocc_ok and std_ok:
        reason = None
    elif not srocc_ok and not std_ok:
        reason = RejectReason.LOW_SROCC_AND_STD
    elif not srocc_ok:
        reason = RejectReason.LOW_SROCC
    else:
        reason = RejectReason.LOW_STD
    return FilterOutcome(
        submission_id=sub.submission_id,
        avg_srocc=avg_srocc,
        avg_std=avg_std,
        per_dimension_srocc=(sroccs[0], sroccs[1], sroccs[2]),
        per_dimension_std=(stds[0], stds[1], stds[2]),
        accepted=reason is None,
        reject_reason=reason,
    )


def unscorable_outcome(submission_id: str) -> FilterOutcome:
    """Outcome for a submission with too few reference-covered sequences."""
    return FilterOutcome(
        submission_id=submission_id,
        avg_srocc=math.nan,
        avg_std=math.nan,
        per_dimension_srocc=(math.nan, math.nan, math.nan),
        per_dimension_std=(math.nan, math.nan, math.nan),
        accepted=False,
        reject_reason=RejectReason.TOO_FEW_OVERLAPPING,
    )


def _mos_minus_submission(prelim: MosTable, sub: Submission) -> MosTable:
    """Prelim table with this submission's own ratings removed (leave-one-out)."""
    entries = dict(prelim.entries)
    for rec in sub.records:
        e = entries.get(rec.sequence_id)
        if e is None:
            continue
        if e.n_ratings <= 1:
            del entries[rec.sequence_id]
            continue
        n = e.n_ratings
        entries[rec.sequence_id] = MosEntry(
            mos_avqa=(e.mos_avqa * n - rec.q1_avqa) / (n - 1),
            mos_av_vqa=(e.mos_av_vqa * n - rec.q2_av_vqa) / (n - 1),
            mos_av_aqa=(e.mos_av_aqa * n - rec.q3_av_aqa) / (n - 1),
            mean_audio_attention_pct=(e.mean_audio_attention_pct * n - rec.audio_attention_pct)
            / (n - 1),
            n_ratings=n - 1,
        )
    return MosTable(entries=entries)


def dynamic_filter(
    submissions: Iterable[Submission],
    thresholds: FilterThresholds = FilterThresholds(),
    reference: MosTable | None = None,
    leave_one_out: bool = False,
) -> tuple[list[FilterOutcome], MosTable]:
    """Filter validated submissions by ranking consistency and dispersion.

    Single pass: without a ``reference``, a preliminary MOS table is
    computed from all given submissions, each submission is scored
    against it, and the final table is recomputed from accepted
    submissions only. With a ``reference`` (qualification stage), each
    submission is scored against the supplied table instead.

    ``leave_one_out`` excludes the scored submission's own ratings from
    the preliminary table; off by default, matching the single-pass
    procedure literally. Submissions with fewer than two scorable
    sequences are marked unscorable rather than raising.
    """
    subs = list(submissions)
    if not subs:
        return [], MosTable(entries={})
    prelim = reference if reference is not None else compute_mos(subs)
    outcomes: list[FilterOutcome] = []
    accepted: list[Submission] = []
    for sub in subs:
        table = prelim
        if leave_one_out and reference is None:
            table = _mos_minus_submission(prelim, sub)
        try:
            outcome = score_submission(sub, table, thresholds)
        except ScoringError:
            outcome = unscorable_outcome(sub.submission_id)
        outcomes.append(outcome)
        if outcome.accepted:
            accepted.append(sub)
    return outcomes, compute_mos(accepted)


# ---------------------------------------------------------------------------
# External report formats.
# ---------------------------------------------------------------------------

FILTER_REPORT_COLUMNS = (
    "submission_id",
    "srocc_avqa", "srocc_av_vqa", "srocc_av_aqa",
    "std_avqa", "std_av_vqa", "std_av_aqa",
    "avg_srocc", "avg_std",
    "verdict", "reason",
)


def _fmt(value: float) -> str:
    return "nan" if math.isnan(value) else f"{value:.6f}"


def filter_report_to_csv_text(outcomes: Iterable[FilterOutcome]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FILTER_REPORT_COLUMNS)
    for o in outcomes:
        writer.writerow(
            [o.submission_id]
            + [_fmt(v) for v in o.per_dimension_srocc]
            + [_fmt(v) for v in o.per_dimension_std]
            + [_fmt(o.avg_srocc), _fmt(o.avg_std)]
            + [o.verdict.value, "" if o.reject_reason is None else o.reject_reason.value]
        )
    return buf.getvalue()


def write_filter_report_csv(outcomes: Iterable[FilterOutcome], path: str) -> None:
    with open(path, "w") as fh:
        fh.write(filter_report_to_csv_text(outcomes))


MOS_EXPORT_COLUMNS = (
    "sequence_id", "mos_avqa", "mos_av_vqa", "mos_av_aqa",
    "mean_audio_attention_pct", "n_ratings",
)


def mos_to_csv_text(table: MosTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MOS_EXPORT_COLUMNS)
    for sid in sorted(table):
        e = table[sid]
        writer.writerow(
            [
                sid,
                f"{e.mos_avqa:.6f}",
                f"{e.mos_av_vqa:.6f}",
                f"{e.mos_av_aqa:.6f}",
                f"{e.mean_audio_attention_pct:.6f}",
                str(e.n_ratings),
            ]
        )
    return buf.getvalue()


def write_mos_csv(table: MosTable, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(mos_to_csv_text(table))


def read_mos_csv(path: str) -> MosTable:
    with open(path, newline="") as fh:
        entries = {
            row["sequence_id"]: MosEntry(
                mos_avqa=float(row["mos_avqa"]),
                mos_av_vqa=float(row["mos_av_vqa"]),
                mos_av_aqa=float(row["mos_av_aqa"]),
                mean_audio_attention_pct=float(row["mean_audio_attention_pct"]),
                n_ratings=int(row["n_ratings"]),
            )
            for row in csv.DictReader(fh)
        }
    return MosTable(entries=entries)
