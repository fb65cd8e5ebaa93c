"""Domain types for the study platform: stimuli, ratings, submissions,
subjects, stage configuration, and aggregated score tables.

All types are immutable value objects. Rating scores are stored as integer
tenths (10..50 for the 1.0-5.0 scale) so that the 0.1 quantization step is
exact; decimal values appear only at interfaces. Scale and coverage
invariants are enforced on ingestion by :func:`validate_submission`.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Collection, Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .errors import ConfigurationError, ScaleError

AUDIO_CATEGORIES = ("speech", "music", "sound")

# Canonical ordering of the 7 non-empty audio-semantic subsets:
# singles first (speech, music, sound), then pairs lexicographic by their
# canonical name, then the triple. Used wherever a deterministic subset
# order is needed (quota rounding ties, report rows).
SEMANTIC_SUBSETS = (
    "speech",
    "music",
    "sound",
    "music+sound",
    "speech+music",
    "speech+sound",
    "speech+music+sound",
)

_GRID_TOL = 1e-6


class Stage(str, Enum):
    PRETEST = "pretest"
    QUALIFICATION = "qualification"
    FORMAL = "formal"


class Verdict(str, Enum):
    PENDING = "pending"
    ACCEPTED = "accepted"
    REJECTED_SROCC = "rejected_srocc"
    REJECTED_STD = "rejected_std"
    REJECTED_INVALID = "rejected_invalid"


class Origin(str, Enum):
    SAMPLED = "sampled"
    MANUAL = "manual"


def semantics_key(categories: Collection[str]) -> str:
    """Canonical '+'-joined name of an audio-semantics subset."""
    members = [c for c in AUDIO_CATEGORIES if c in categories]
    if len(members) != len(set(categories)) or not members:
        raise ValueError(f"not a non-empty subset of {AUDIO_CATEGORIES}: {sorted(categories)}")
    return "+".join(members)


def semantics_from_key(key: str) -> frozenset[str]:
    parts = key.split("+") if key else []
    got = frozenset(parts)
    if semantics_key(got) != key:
        raise ValueError(f"non-canonical semantics key: {key!r}")
    return got


@dataclass(frozen=True)
class Sequence:
    """One audio-visual stimulus with identity, grouping, and pseudo-labels.

    ``group_id`` may be empty while the sequence is still in a candidate
    pool; stage configuration assigns every study sequence to exactly one
    home group.
    """

    id: str
    group_id: str
    duration_s: float
    width: int
    height: int
    audio_semantics: frozenset[str]
    pseudo_audio_pq: float
    pseudo_audio_ce: float
    pseudo_video_q: float
    origin: Origin = Origin.SAMPLED

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("sequence id must be non-empty")
        if not self.duration_s > 0:
            raise ValueError(f"duration_s must be > 0, got {self.duration_s}")
        semantics_key(self.audio_semantics)  # validates the subset

    @property
    def semantics(self) -> str:
        return semantics_key(self.audio_semantics)


def _tenths_of(name: str, value: float) -> int:
    scaled = value * 10.0
    tenths = round(scaled)
    if abs(scaled - tenths) > _GRID_TOL:
        raise ScaleError(f"{name}={value!r} is off the 0.1 grid")
    return int(tenths)


@dataclass(frozen=True)
class RatingRecord:
    """The four answers for one sequence by one subject.

    Q1-Q3 live on the 1.0-5.0 scale with step 0.1 and are held as integer
    tenths; Q4 is the audio share of attention in integer percent (the
    video share is 100 minus it). Construction does not range-check:
    out-of-scale values must remain representable so ingestion can flag
    them (see :meth:`scale_errors`). Use :meth:`from_decimals` for the
    strict path.
    """

    sequence_id: str
    q1_tenths: int
    q2_tenths: int
    q3_tenths: int
    audio_attention_pct: int

    @classmethod
    def from_decimals(
        cls, sequence_id: str, q1: float, q2: float, q3: float, q4_audio_pct: int
    ) -> "RatingRecord":
        """Build a record from interface decimals, raising ScaleError on
        any off-grid or out-of-scale value."""
        rec = cls(
            sequence_id=sequence_id,
            q1_tenths=_tenths_of("q1_avqa", q1),
            q2_tenths=_tenths_of("q2_av_vqa", q2),
            q3_tenths=_tenths_of("q3_av_aqa", q3),
            audio_attention_pct=int(q4_audio_pct),
        )
        problems = rec.scale_errors()
        if problems:
            raise ScaleError("; ".join(problems))
        return rec

    @property
    def q1_avqa(self) -> float:
        return self.q1_tenths / 10.0

    @property
    def q2_av_vqa(self) -> float:
        return self.q2_tenths / 10.0

    @property
    def q3_av_aqa(self) -> float:
        return self.q3_tenths / 10.0

    @property
    def video_attention_pct(self) -> int:
        return 100 - self.audio_attention_pct

    def scale_errors(self) -> list[str]:
        """Human-readable scale violations, empty when the record is valid."""
        problems = []
        for name, tenths in (
            ("q1_avqa", self.q1_tenths),
            ("q2_av_vqa", self.q2_tenths),
            ("q3_av_aqa", self.q3_tenths),
        ):
            if not 10 <= tenths <= 50:
                problems.append(f"{name}={tenths / 10.0} outside [1.0, 5.0]")
        if not 0 <= self.audio_attention_pct <= 100:
            problems.append(
                f"q4_audio_attention_pct={self.audio_attention_pct} outside [0, 100]"
            )
        return problems


@dataclass(frozen=True)
class InteractionEvent:
    """One timestamped playback or slider event from a rating session."""

    t: float
    kind: str  # play | pause | ended | seek_attempt | fullscreen_exit | slider
    sequence_id: str = ""
    value: float | None = None


@dataclass(frozen=True)
class Submission:
    """One completed session: per-sequence ratings plus session metadata."""

    submission_id: str
    worker_id: str
    group_id: str
    stage: Stage
    records: tuple[RatingRecord, ...]
    user_agent: str = ""
    interaction_log: tuple[InteractionEvent, ...] = ()
    watch_complete: bool = True
    verdict: Verdict = Verdict.PENDING

    def with_verdict(self, verdict: Verdict) -> "Submission":
        return Submission(
            submission_id=self.submission_id,
            worker_id=self.worker_id,
            group_id=self.group_id,
            stage=self.stage,
            records=self.records,
            user_agent=self.user_agent,
            interaction_log=self.interaction_log,
            watch_complete=self.watch_complete,
            verdict=verdict,
        )


@dataclass(frozen=True)
class Subject:
    """A crowd worker as known to the platform.

    ``qualified`` may only transition false -> true and ``history`` only
    grows; both evolutions return new instances.
    """

    worker_id: str
    approval_rate_pct: float = 0.0
    approved_hits: int = 0
    qualified: bool = False
    history: frozenset[tuple[Stage, str]] = frozenset()

    def with_profile(self, approval_rate_pct: float, approved_hits: int) -> "Subject":
        return Subject(
            worker_id=self.worker_id,
            approval_rate_pct=approval_rate_pct,
            approved_hits=approved_hits,
            qualified=self.qualified,
            history=self.history,
        )

    def with_qualified(self) -> "Subject":
        if self.qualified:
            return self
        return Subject(
            worker_id=self.worker_id,
            approval_rate_pct=self.approval_rate_pct,
            approved_hits=self.approved_hits,
            qualified=True,
            history=self.history,
        )

    def with_history(self, stage: Stage, group_id: str) -> "Subject":
        return Subject(
            worker_id=self.worker_id,
            approval_rate_pct=self.approval_rate_pct,
            approved_hits=self.approved_hits,
            qualified=self.qualified,
            history=self.history | {(stage, group_id)},
        )


@dataclass(frozen=True)
class EligibilityRule:
    """Worker-profile gate for a stage. Thresholds are strict ('above
    97%', 'more than 500 tasks')."""

    min_approval_rate_pct: float = 97.0
    min_approved_hits: int = 500
    requires_qualified: bool = False

    def admits(self, approval_rate_pct: float, approved_hits: int, qualified: bool) -> bool:
        if approval_rate_pct <= self.min_approval_rate_pct:
            return False
        if approved_hits <= self.min_approved_hits:
            return False
        if self.requires_qualified and not qualified:
            return False
        return True


@dataclass(frozen=True)
class FilterThresholds:
    """Acceptance thresholds for the dynamic filter (strict inequalities)."""

    srocc_min: float = 0.5
    std_min: float = 0.5


@dataclass(frozen=True)
class StageConfig:
    """Declarative definition of one study stage."""

    stage: Stage
    groups: Mapping[str, tuple[str, ...]]
    group_size: int = 30
    eligibility: EligibilityRule = EligibilityRule()
    thresholds: FilterThresholds = FilterThresholds()

    def __post_init__(self) -> None:
        seen: dict[str, str] = {}
        for gid, members in self.groups.items():
            if len(members) != self.group_size:
                raise ConfigurationError(
                    f"stage {self.stage.value}: group {gid} has {len(members)} "
                    f"members, expected {self.group_size}"
                )
            for sid in members:
                if sid in seen:
                    raise ConfigurationError(
                        f"stage {self.stage.value}: sequence {sid} appears in "
                        f"groups {seen[sid]} and {gid}"
                    )
                seen[sid] = gid

    def sequence_ids(self) -> set[str]:
        return {sid for members in self.groups.values() for sid in members}


@dataclass(frozen=True)
class MosEntry:
    mos_avqa: float
    mos_av_vqa: float
    mos_av_aqa: float
    mean_audio_attention_pct: float
    n_ratings: int

    def __post_init__(self) -> None:
        for name, v in (
            ("mos_avqa", self.mos_avqa),
            ("mos_av_vqa", self.mos_av_vqa),
            ("mos_av_aqa", self.mos_av_aqa),
        ):
            if not 1.0 - 1e-9 <= v <= 5.0 + 1e-9:
                raise ValueError(f"{name}={v} outside [1.0, 5.0]")
        if not 0.0 <= self.mean_audio_attention_pct <= 100.0:
            raise ValueError(f"mean attention {self.mean_audio_attention_pct} outside [0, 100]")
        if self.n_ratings < 1:
            raise ValueError("listed entries require n_ratings >= 1")

    def score(self, dimension: str) -> float:
        return {
            "avqa": self.mos_avqa,
            "av_vqa": self.mos_av_vqa,
            "av_aqa": self.mos_av_aqa,
        }[dimension]


@dataclass(frozen=True)
class MosTable:
    """Per-sequence aggregated scores; sequences without ratings are absent."""

    entries: Mapping[str, MosEntry] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, sequence_id: str) -> bool:
        return sequence_id in self.entries

    def __getitem__(self, sequence_id: str) -> MosEntry:
        return self.entries[sequence_id]

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def get(self, sequence_id: str) -> MosEntry | None:
        return self.entries.get(sequence_id)

    def items(self) -> Iterable[tuple[str, MosEntry]]:
        return self.entries.items()


DIMENSIONS = ("avqa", "av_vqa", "av_aqa")


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of ingestion-time validation of one submission."""

    submission_id: str
    missing_sequences: tuple[str, ...] = ()
    unexpected_sequences: tuple[str, ...] = ()
    duplicated_sequences: tuple[str, ...] = ()
    scale_errors: tuple[str, ...] = ()
    duplicate_submission: bool = False
    incomplete_watch: bool = False

    @property
    def is_valid(self) -> bool:
        return not self.problems

    @property
    def verdict(self) -> Verdict:
        return Verdict.PENDING if self.is_valid else Verdict.REJECTED_INVALID

    @property
    def problems(self) -> tuple[str, ...]:
        out: list[str] = []
        if self.missing_sequences:
            out.append(f"missing sequences: {', '.join(self.missing_sequences)}")
        if self.unexpected_sequences:
            out.append(f"unexpected sequences: {', '.join(self.unexpected_sequences)}")
        if self.duplicated_sequences:
            out.append(f"duplicated sequences: {', '.join(self.duplicated_sequences)}")
        out.extend(self.scale_errors)
        if self.duplicate_submission:
            out.append("duplicate submission for this worker, stage, and group")
        if self.incomplete_watch:
            out.append("watch time below sequence duration")
        return tuple(out)


def validate_submission(
    sub: Submission,
    cfg: StageConfig,
    prior: Collection[tuple[str, Stage, str]] = (),
) -> ValidationReport:
    """Check one submission against its stage configuration.

    Flags wrong or missing sequence coverage, out-of-scale values,
    a duplicate (worker, stage, group) triple against ``prior``, and an
    incomplete watch. Any flag makes the submission invalid
    (verdict ``rejected_invalid``).

    Raises ConfigurationError when ``cfg`` does not cover the
    submission's group.
    """
    if sub.group_id not in cfg.groups:
        raise ConfigurationError(
            f"group {sub.group_id!r} is not part of stage {cfg.stage.value}"
        )
    expected = set(cfg.groups[sub.group_id])
    got = [r.sequence_id for r in sub.records]
    got_set = set(got)
    duplicated = sorted({sid for sid in got if got.count(sid) > 1})
    scale_problems: list[str] = []
    for rec in sub.records:
        for msg in rec.scale_errors():
            scale_problems.append(f"{rec.sequence_id}: {msg}")
    return ValidationReport(
        submission_id=sub.submission_id,
        missing_sequences=tuple(sorted(expected - got_set)),
        unexpected_sequences=tuple(sorted(got_set - expected)),
        duplicated_sequences=tuple(duplicated),
        scale_errors=tuple(scale_problems),
        duplicate_submission=(sub.worker_id, sub.stage, sub.group_id) in prior,
        incomplete_watch=not sub.watch_complete,
    )


def watch_complete_from_log(
    log: Iterable[InteractionEvent], durations: Mapping[str, float]
) -> bool:
    """True when every sequence's summed playback time covers its duration.

    Playback time is the sum of play->(pause|ended) intervals per
    sequence; an unterminated play interval contributes nothing.
    """
    watched: dict[str, float] = {sid: 0.0 for sid in durations}
    open_play: dict[str, float] = {}
    for ev in log:
        if ev.kind == "play":
            open_play[ev.sequence_id] = ev.t
        elif ev.kind in ("pause", "ended") and ev.sequence_id in open_play:
            start = open_play.pop(ev.sequence_id)
            if ev.sequence_id in watched:
                watched[ev.sequence_id] += max(0.0, ev.t - start)
    return all(watched[sid] >= durations[sid] - _GRID_TOL for sid in durations)


# ---------------------------------------------------------------------------
# Serialization: sequence catalog CSV and the JSON wire/archive formats.
# ---------------------------------------------------------------------------

CATALOG_COLUMNS = (
    "id", "group_id", "duration_s", "width", "height",
    "audio_semantics", "pq", "ce", "vq", "origin",
)


def sequence_to_row(seq: Sequence) -> dict[str, str]:
    return {
        "id": seq.id,
        "group_id": seq.group_id,
        "duration_s": repr(seq.duration_s),
        "width": str(seq.width),
        "height": str(seq.height),
        "audio_semantics": ";".join(c for c in AUDIO_CATEGORIES if c in seq.audio_semantics),
        "pq": repr(seq.pseudo_audio_pq),
        "ce": repr(seq.pseudo_audio_ce),
        "vq": repr(seq.pseudo_video_q),
        "origin": seq.origin.value,
    }


def sequence_from_row(row: Mapping[str, str]) -> Sequence:
    return Sequence(
        id=row["id"],
        group_id=row["group_id"],
        duration_s=float(row["duration_s"]),
        width=int(row["width"]),
        height=int(row["height"]),
        audio_semantics=frozenset(p for p in row["audio_semantics"].split(";") if p),
        pseudo_audio_pq=float(row["pq"]),
        pseudo_audio_ce=float(row["ce"]),
        pseudo_video_q=float(row["vq"]),
        origin=Origin(row["origin"]),
    )


def write_catalog_csv(sequences: Iterable[Sequence], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CATALOG_COLUMNS)
        writer.writeheader()
        for seq in sequences:
            writer.writerow(sequence_to_row(seq))


def read_catalog_csv(path: str) -> list[Sequence]:
    with open(path, newline="") as fh:
        return [sequence_from_row(row) for row in csv.DictReader(fh)]


def rating_to_dict(rec: RatingRecord) -> dict[str, Any]:
    return {
        "sequence_id": rec.sequence_id,
        "q1_avqa": rec.q1_avqa,
        "q2_av_vqa": rec.q2_av_vqa,
        "q3_av_aqa": rec.q3_av_aqa,
        "q4_audio_attention_pct": rec.audio_attention_pct,
    }


def rating_from_dict(data: Mapping[str, Any]) -> tuple[RatingRecord, list[str]]:
    """Lenient wire parse: returns the record plus grid-violation messages.

    Out-of-range values stay representable (validation flags them);
    off-grid decimals are rounded to the nearest tenth and reported.
    """
    problems: list[str] = []

    def tenths(name: str) -> int:
        scaled = float(data[name]) * 10.0
        t = round(scaled)
        if abs(scaled - t) > _GRID_TOL:
            problems.append(f"{name}={data[name]!r} is off the 0.1 grid")
        return int(t)

    rec = RatingRecord(
        sequence_id=str(data["sequence_id"]),
        q1_tenths=tenths("q1_avqa"),
        q2_tenths=tenths("q2_av_vqa"),
        q3_tenths=tenths("q3_av_aqa"),
        audio_attention_pct=int(data["q4_audio_attention_pct"]),
    )
    return rec, problems


def event_to_dict(ev: InteractionEvent) -> dict[str, Any]:
    out: dict[str, Any] = {"t": ev.t, "kind": ev.kind, "sequence_id": ev.sequence_id}
    if ev.value is not None:
        out["value"] = ev.value
    return out


def event_from_dict(data: Mapping[str, Any]) -> InteractionEvent:
    return InteractionEvent(
        t=float(data["t"]),
        kind=str(data["kind"]),
        sequence_id=str(data.get("sequence_id", "")),
        value=None if data.get("value") is None else float(data["value"]),
    )


def submission_to_dict(sub: Submission) -> dict[str, Any]:
    return {
        "submission_id": sub.submission_id,
        "worker_id": sub.worker_id,
        "group_id": sub.group_id,
        "stage": sub.stage.value,
        "records": [rating_to_dict(r) for r in sub.records],
        "user_agent": sub.user_agent,
        "interaction_log": [event_to_dict(e) for e in sub.interaction_log],
        "watch_complete": sub.watch_complete,
        "verdict": sub.verdict.value,
    }


def submission_from_dict(data: Mapping[str, Any]) -> Submission:
    records = []
    for item in data["records"]:
        rec, problems = rating_from_dict(item)
        if problems:
            raise ScaleError("; ".join(problems))
        records.append(rec)
    return Submission(
        submission_id=str(data["submission_id"]),
        worker_id=str(data["worker_id"]),
        group_id=str(data["group_id"]),
        stage=Stage(data["stage"]),
        records=tuple(records),
        user_agent=str(data.get("user_agent", "")),
        interaction_log=tuple(event_from_dict(e) for e in data.get("interaction_log", [])),
        watch_complete=bool(data.get("watch_complete", True)),
        verdict=Verdict(data.get("verdict", "pending")),
    )


def write_submissions_jsonl(subs: Iterable[Submission], path: str) -> None:
    with open(path, "w") as fh:
        for sub in subs:
            fh.write(json.dumps(submission_to_dict(sub), sort_keys=True))
            fh.write("\n")


def read_submissions_jsonl(path: str) -> list[Submission]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(submission_from_dict(json.loads(line)))
    return out


def subject_to_dict(subj: Subject) -> dict[str, Any]:
    return {
        "worker_id": subj.worker_id,
        "approval_rate_pct": subj.approval_rate_pct,
        "approved_hits": subj.approved_hits,
        "qualified": subj.qualified,
        "history": sorted([stage.value, gid] for stage, gid in subj.history),
    }


def subject_from_dict(data: Mapping[str, Any]) -> Subject:
    return Subject(
        worker_id=str(data["worker_id"]),
        approval_rate_pct=float(data["approval_rate_pct"]),
        approved_hits=int(data["approved_hits"]),
        qualified=bool(data["qualified"]),
        history=frozenset((Stage(s), g) for s, g in data["history"]),
    )


def stage_config_to_dict(cfg: StageConfig) -> dict[str, Any]:
    return {
        "stage": cfg.stage.value,
        "groups": {gid: list(members) for gid, members in cfg.groups.items()},
        "group_size": cfg.group_size,
        "eligibility": {
            "min_approval_rate_pct": cfg.eligibility.min_approval_rate_pct,
            "min_approved_hits": cfg.eligibility.min_approved_hits,
            "requires_qualified": cfg.eligibility.requires_qualified,
        },
        "thresholds": {
            "srocc_min": cfg.thresholds.srocc_min,
            "std_min": cfg.thresholds.std_min,
        },
    }


def stage_config_from_dict(data: Mapping[str, Any]) -> StageConfig:
    elig = data["eligibility"]
    thr = data["thresholds"]
    return StageConfig(
        stage=Stage(data["stage"]),
        groups={gid: tuple(members) for gid, members in data["groups"].items()},
        group_size=int(data["group_size"]),
        eligibility=EligibilityRule(
            min_approval_rate_pct=float(elig["min_approval_rate_pct"]),
            min_approved_hits=int(elig["min_approved_hits"]),
            requires_qualified=bool(elig["requires_qualified"]),
        ),
        thresholds=FilterThresholds(
            srocc_min=float(thr["srocc_min"]), std_min=float(thr["std_min"])
        ),
    )


def mos_table_to_dict(table: MosTable) -> dict[str, Any]:
    return {
        sid: {
            "mos_avqa": e.mos_avqa,
            "mos_av_vqa": e.mos_av_vqa,
            "mos_av_aqa": e.mos_av_aqa,
            "mean_audio_attention_pct": e.mean_audio_attention_pct,
            "n_ratings": e.n_ratings,
        }
        for sid, e in sorted(table.items())
    }


def mos_table_from_dict(data: Mapping[str, Any]) -> MosTable:
    return MosTable(
        entries={
            sid: MosEntry(
                mos_avqa=float(e["mos_avqa"]),
                mos_av_vqa=float(e["mos_av_vqa"]),
                mos_av_aqa=float(e["mos_av_aqa"]),
                mean_audio_attention_pct=float(e["mean_audio_attention_pct"]),
                n_ratings=int(e["n_ratings"]),
            )
            for sid, e in data.items()
        }
    )


def catalog_to_csv_text(sequences: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CATALOG_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for seq in sequences:
        writer.writerow(sequence_to_row(seq))
    return buf.getvalue()
