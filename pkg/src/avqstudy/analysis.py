"""Post-hoc label analysis: modality-difference grouping, attention
asymmetry, inter-dimension correlations, and score distributions.

Sequences are bucketed by the gap between their audio-only and
video-only scores; the boundaries sit at +-0.1 (slight difference) and
+-0.3 (large difference), with exact boundary values assigned outward
(|diff| = 0.1 leaves the approximately-equal group, |diff| = 0.3 enters
the outermost group).
"""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Iterable
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .domain import DIMENSIONS, MosTable
from .errors import OperationalError
from .stats import srocc

SLIGHT = 0.1
LARGE = 0.3


class ModalityGroup(str, Enum):
    A_MUCH_LESS_V = "A<<V"
    A_LESS_V = "A<V"
    A_APPROX_V = "A~V"
    A_GREATER_V = "A>V"
    A_MUCH_GREATER_V = "A>>V"


MODALITY_GROUP_ORDER = (
    ModalityGroup.A_MUCH_LESS_V,
    ModalityGroup.A_LESS_V,
    ModalityGroup.A_APPROX_V,
    ModalityGroup.A_GREATER_V,
    ModalityGroup.A_MUCH_GREATER_V,
)


def classify_modality_group(diff: float) -> ModalityGroup:
    """Bucket a per-sequence audio-minus-video score gap."""
    if diff <= -LARGE:
        return ModalityGroup.A_MUCH_LESS_V
    if diff <= -SLIGHT:
        return ModalityGroup.A_LESS_V
    if diff < SLIGHT:
        return ModalityGroup.A_APPROX_V
    if diff < LARGE:
        return ModalityGroup.A_GREATER_V
    return ModalityGroup.A_MUCH_GREATER_V


@dataclass(frozen=True)
class ModalityRow:
    group: str
    n: int
    mean_audio_attention_pct: float
    mean_diff_video: float  # mean(AVQA - AV_VQA)
    mean_diff_audio: float  # mean(AVQA - AV_AQA)


def modality_report(mos: MosTable) -> list[ModalityRow]:
    """Per-group attention and score-difference means, with an overall row.

    Group sizes always sum to the table size."""
    if not len(mos):
        raise OperationalError("modality report needs a non-empty MOS table")
    buckets: dict[ModalityGroup, list[tuple[float, float, float]]] = {
        g: [] for g in MODALITY_GROUP_ORDER
    }
    for _, e in mos.items():
        group = classify_modality_group(e.mos_av_aqa - e.mos_av_vqa)
        buckets[group].append(
            (
                e.mean_audio_attention_pct,
                e.mos_avqa - e.mos_av_vqa,
                e.mos_avqa - e.mos_av_aqa,
            )
        )
    rows = []
    for group in MODALITY_GROUP_ORDER:
        vals = buckets[group]
        if vals:
            arr = np.asarray(vals)
            rows.append(
                ModalityRow(
                    group=group.value,
                    n=len(vals),
                    mean_audio_attention_pct=float(arr[:, 0].mean()),
                    mean_diff_video=float(arr[:, 1].mean()),
                    mean_diff_audio=float(arr[:, 2].mean()),
                )
            )
        else:
            rows.append(
                ModalityRow(
                    group=group.value,
                    n=0,
                    mean_audio_attention_pct=math.nan,
                    mean_diff_video=math.nan,
                    mean_diff_audio=math.nan,
                )
            )
    all_vals = np.asarray([v for vals in buckets.values() for v in vals])
    rows.append(
        ModalityRow(
            group="overall",
            n=len(all_vals),
            mean_audio_attention_pct=float(all_vals[:, 0].mean()),
            mean_diff_video=float(all_vals[:, 1].mean()),
            mean_diff_audio=float(all_vals[:, 2].mean()),
        )
    )
    return rows


def correlation_report(mos: MosTable) -> dict:
    """Pairwise SROCC and Pearson matrices over the three dimensions.

    Matrices are symmetric with unit diagonal; a constant column makes
    the affected off-diagonal entries undefined (None in the output)."""
    if len(mos) < 3:
        raise OperationalError("correlation report needs at least 3 sequences")
    cols = {
        dim: np.asarray([e.score(dim) for _, e in sorted(mos.items())])
        for dim in DIMENSIONS
    }

    def pearson(a: np.ndarray, b: np.ndarray) -> float:
        da = a - a.mean()
        db = b - b.mean()
        va = float(np.dot(da, da))
        vb = float(np.dot(db, db))
        if va == 0.0 or vb == 0.0:
            return math.nan
        return float(np.dot(da, db)) / math.sqrt(va * vb)

    def matrix(fn) -> list[list[float | None]]:
        out: list[list[float | None]] = []
        for a in DIMENSIONS:
            row: list[float | None] = []
            for b in DIMENSIONS:
                if a == b:
                    row.append(1.0)
                    continue
                v = fn(cols[a], cols[b])
                row.append(None if math.isnan(v) else float(v))
            out.append(row)
        return out

    return {
        "dimensions": list(DIMENSIONS),
        "srocc": matrix(lambda a, b: srocc(a, b)),
        "pearson": matrix(pearson),
    }


def distribution_report(mos: MosTable, n_bins: int = 20) -> dict:
    """Per-dimension histogram over [1, 5], mean, and sample sd.

    With a single entry the sd is reported as 0 and flagged."""
    if not len(mos):
        raise OperationalError("distribution report needs a non-empty MOS table")
    edges = np.linspace(1.0, 5.0, n_bins + 1)
    report: dict = {"n_sequences": len(mos), "bin_edges": edges.tolist(), "dimensions": {}}
    single = len(mos) == 1
    for dim in DIMENSIONS:
        vals = np.asarray([e.score(dim) for _, e in mos.items()])
        report["dimensions"][dim] = {
            "histogram": np.histogram(vals, bins=edges)[0].tolist(),
            "mean": float(vals.mean()),
            "sd": 0.0 if single else float(vals.std(ddof=1)),
            "sd_undefined_n1": single,
        }
    att = np.asarray([e.mean_audio_attention_pct for _, e in mos.items()])
    report["audio_attention"] = {
        "mean": float(att.mean()),
        "sd": 0.0 if single else float(att.std(ddof=1)),
        "statistic": "across per-sequence mean attention values",
    }
    return report


MODALITY_CSV_COLUMNS = (
    "group", "n", "mean_audio_attention_pct", "mean_diff_video", "mean_diff_audio",
)


def modality_report_to_csv_text(rows: Iterable[ModalityRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MODALITY_CSV_COLUMNS)
    for r in rows:
        writer.writerow(
            [
                r.group,
                str(r.n),
                "nan" if math.isnan(r.mean_audio_attention_pct) else f"{r.mean_audio_attention_pct:.2f}",
                "nan" if math.isnan(r.mean_diff_video) else f"{r.mean_diff_video:+.2f}",
                "nan" if math.isnan(r.mean_diff_audio) else f"{r.mean_diff_audio:+.2f}",
            ]
        )
    return buf.getvalue()
