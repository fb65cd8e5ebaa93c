"""Study orchestration: eligibility, task assignment, submission intake,
completion codes, qualification grants, stage filtering, and exports.

All mutating operations are serialized behind one lock, which gives the
required per-worker mutual exclusion and keeps filtering runs exclusive
with intake. Domain objects remain immutable; the service owns the only
mutable state.
"""

from __future__ import annotations

import json
import logging
import random
import string
import threading
import time
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from ..domain import (
    InteractionEvent,
    MosTable,
    RatingRecord,
    Sequence,
    Stage,
    StageConfig,
    Subject,
    Submission,
    Verdict,
    event_from_dict,
    mos_table_from_dict,
    mos_table_to_dict,
    rating_from_dict,
    read_submissions_jsonl,
    sequence_from_row,
    sequence_to_row,
    stage_config_from_dict,
    stage_config_to_dict,
    subject_from_dict,
    subject_to_dict,
    validate_submission,
    watch_complete_from_log,
    write_catalog_csv,
    write_submissions_jsonl,
)
from ..errors import ConfigurationError, OperationalError
from ..errors import ScoringError
from ..stats import (
    FilterOutcome,
    RejectReason,
    compute_mos,
    dynamic_filter,
    score_submission,
    unscorable_outcome,
    write_filter_report_csv,
    write_mos_csv,
)
from .platform import CrowdPlatform, MockCrowdPlatform

logger = logging.getLogger(__name__)

_CODE_ALPHABET = string.ascii_uppercase + string.ascii_lowercase + string.digits
CODE_LENGTH = 12
DEFAULT_EXPIRY_S = 3600.0

STAGE_ORDER = (Stage.PRETEST, Stage.QUALIFICATION, Stage.FORMAL)


@dataclass(frozen=True)
class PlaylistItem:
    sequence_id: str
    media_url: str
    duration_s: float


@dataclass(frozen=True)
class TaskAssignment:
    session_token: str
    worker_id: str
    stage: Stage
    group_id: str
    playlist: tuple[PlaylistItem, ...]
    issued_at: float
    expires_at: float


@dataclass(frozen=True)
class Denial:
    reason: str  # eligibility | exhausted
    detail: str = ""


@dataclass(frozen=True)
class CompletionCode:
    code: str
    submission_id: str
    issued_at: float


@dataclass(frozen=True)
class SubmitRejection:
    reason: str  # unknown_token | expired | validation
    problems: tuple[str, ...] = ()


@dataclass
class AssignmentRecord:
    assignment: TaskAssignment
    worker_qualified_at_issue: bool
    status: str = "active"  # active | submitted | expired
    submission_id: str | None = None
    code: str | None = None
    code_issued_at: float | None = None
    rejection: SubmitRejection | None = None


@dataclass
class StudyState:
    """Everything the deployment persists between runs."""

    sequences: dict[str, Sequence] = field(default_factory=dict)
    stage_configs: dict[Stage, StageConfig] = field(default_factory=dict)
    subjects: dict[str, Subject] = field(default_factory=dict)
    assignments: dict[str, AssignmentRecord] = field(default_factory=dict)
    active_by_worker: dict[str, str] = field(default_factory=dict)
    submissions: dict[str, Submission] = field(default_factory=dict)
    submission_keys: set[tuple[str, Stage, str]] = field(default_factory=set)
    env_checks: dict[str, Any] = field(default_factory=dict)
    codes: set[str] = field(default_factory=set)
    counters: dict[tuple[Stage, str], int] = field(default_factory=dict)
    mos_tables: dict[Stage, MosTable] = field(default_factory=dict)
    outcomes: dict[Stage, dict[str, FilterOutcome]] = field(default_factory=dict)
    next_submission_ord: int = 1


class StudyService:
    """Thread-safe façade over :class:`StudyState`."""

    def __init__(
        self,
        state: StudyState | None = None,
        *,
        platform: CrowdPlatform | None = None,
        clock: Callable[[], float] = time.time,
        rng: random.Random | None = None,
        assignment_expiry_s: float = DEFAULT_EXPIRY_S,
        media_base_url: str = "media/",
    ) -> None:
        self.state = state or StudyState()
        self.platform = platform if platform is not None else MockCrowdPlatform()
        self.clock = clock
        self.rng = rng or random.SystemRandom()
        self.assignment_expiry_s = assignment_expiry_s
        self.media_base_url = media_base_url
        self._lock = threading.Lock()

    # -- setup -------------------------------------------------------------

    def install_catalog(self, sequences: Iterable[Sequence]) -> None:
        with self._lock:
            for seq in sequences:
                self.state.sequences[seq.id] = seq

    def install_stage(self, cfg: StageConfig) -> None:
        with self._lock:
            unknown = cfg.sequence_ids() - set(self.state.sequences)
            if unknown:
                raise ConfigurationError(
                    f"stage {cfg.stage.value} references unknown sequences: "
                    f"{sorted(unknown)[:5]}..."
                )
            self.state.stage_configs[cfg.stage] = cfg

    # -- task assignment -----------------------------------------------------

    def request_task(
        self,
        worker_id: str,
        stage: Stage,
        approval_rate_pct: float,
        approved_hits: int,
    ) -> TaskAssignment | Denial:
        with self._lock:
            cfg = self.state.stage_configs.get(stage)
            if cfg is None:
                raise ConfigurationError(f"stage {stage.value} is not configured")
            now = self.clock()

            subject = self.state.subjects.get(worker_id) or Subject(worker_id=worker_id)
            subject = subject.with_profile(approval_rate_pct, approved_hits)
            self.state.subjects[worker_id] = subject

            existing = self._active_assignment(worker_id, now)
            if existing is not None:
                return existing.assignment

            if not cfg.eligibility.admits(approval_rate_pct, approved_hits, subject.qualified):
                return Denial(
                    reason="eligibility",
                    detail=(
                        f"requires approval rate > {cfg.eligibility.min_approval_rate_pct}%, "
                        f"approved tasks > {cfg.eligibility.min_approved_hits}"
                        + (", and the qualification credential"
                           if cfg.eligibility.requires_qualified else "")
                    ),
                )

            done = {gid for st, gid in subject.history if st == stage}
            candidates = [gid for gid in cfg.groups if gid not in done]
            if not candidates:
                return Denial(reason="exhausted", detail="no remaining groups in this stage")

            counts = {gid: self.state.counters.get((stage, gid), 0) for gid in candidates}
            least = min(counts.values())
            pool = [gid for gid in candidates if counts[gid] == least]
            group_id = pool[self.rng.randrange(len(pool))]

            token = "tok-" + "".join(self.rng.choices(_CODE_ALPHABET, k=32))
            playlist = tuple(
                PlaylistItem(
                    sequence_id=sid,
                    media_url=f"{self.media_base_url}{sid}.mp4",
                    duration_s=self.state.sequences[sid].duration_s,
                )
                for sid in cfg.groups[group_id]
            )
            assignment = TaskAssignment(
                session_token=token,
                worker_id=worker_id,
                stage=stage,
                group_id=group_id,
                playlist=playlist,
                issued_at=now,
                expires_at=now + self.assignment_expiry_s,
            )
            self.state.assignments[token] = AssignmentRecord(
                assignment=assignment,
                worker_qualified_at_issue=subject.qualified,
            )
            self.state.active_by_worker[worker_id] = token
            return assignment

    def _active_assignment(self, worker_id: str, now: float) -> AssignmentRecord | None:
        token = self.state.active_by_worker.get(worker_id)
        if token is None:
            return None
        record = self.state.assignments[token]
        if record.status != "active":
            del self.state.active_by_worker[worker_id]
            return None
        if now >= record.assignment.expires_at:
            record.status = "expired"
            del self.state.active_by_worker[worker_id]
            return None
        return record

    # -- submission intake ---------------------------------------------------

    def submit(
        self,
        session_token: str,
        records: Iterable[RatingRecord | Mapping[str, Any]],
        interaction_log: Iterable[InteractionEvent | Mapping[str, Any]] = (),
        user_agent: str = "",
        env_checks: Mapping[str, Any] | None = None,
    ) -> CompletionCode | SubmitRejection:
        with self._lock:
            record = self.state.assignments.get(session_token)
            if record is None:
                return SubmitRejection(reason="unknown_token")
            if record.status == "submitted":
                # idempotent replay: return the original outcome
                if record.code is not None:
                    return CompletionCode(
                        code=record.code,
                        submission_id=record.submission_id or "",
                        issued_at=record.code_issued_at or record.assignment.issued_at,
                    )
                return record.rejection or SubmitRejection(reason="validation")
            now = self.clock()
            if record.status == "expired" or now >= record.assignment.expires_at:
                record.status = "expired"
                self._clear_active(record.assignment.worker_id, session_token)
                return SubmitRejection(reason="expired")

            assignment = record.assignment
            cfg = self.state.stage_configs[assignment.stage]

            parsed: list[RatingRecord] = []
            grid_problems: list[str] = []
            for item in records:
                if isinstance(item, RatingRecord):
                    parsed.append(item)
                else:
                    rec, problems = rating_from_dict(item)
                    parsed.append(rec)
                    grid_problems.extend(problems)
            events = tuple(
                ev if isinstance(ev, InteractionEvent) else event_from_dict(ev)
                for ev in interaction_log
            )
            durations = {
                sid: self.state.sequences[sid].duration_s
                for sid in cfg.groups[assignment.group_id]
            }
            submission_id = f"sub-{self.state.next_submission_ord:06d}"
            self.state.next_submission_ord += 1
            sub = Submission(
                submission_id=submission_id,
                worker_id=assignment.worker_id,
                group_id=assignment.group_id,
                stage=assignment.stage,
                records=tuple(parsed),
                user_agent=user_agent,
                interaction_log=events,
                watch_complete=watch_complete_from_log(events, durations),
            )
            report = validate_submission(sub, cfg, self.state.submission_keys)
            problems = list(report.problems) + grid_problems
            verdict = Verdict.PENDING if not problems else Verdict.REJECTED_INVALID

            self.state.submissions[submission_id] = sub.with_verdict(verdict)
            self.state.submission_keys.add((sub.worker_id, sub.stage, sub.group_id))
            if env_checks is not None:
                self.state.env_checks[submission_id] = dict(env_checks)
            subject = self.state.subjects.get(assignment.worker_id) or Subject(
                worker_id=assignment.worker_id
            )
            self.state.subjects[assignment.worker_id] = subject.with_history(
                assignment.stage, assignment.group_id
            )
            record.status = "submitted"
            record.submission_id = submission_id
            self._clear_active(assignment.worker_id, session_token)

            if problems:
                record.rejection = SubmitRejection(
                    reason="validation", problems=tuple(problems)
                )
                return record.rejection
            code = self._issue_code()
            record.code = code
            record.code_issued_at = now
            return CompletionCode(
                code=code, submission_id=submission_id, issued_at=now
            )

    def _clear_active(self, worker_id: str, session_token: str) -> None:
        if self.state.active_by_worker.get(worker_id) == session_token:
            del self.state.active_by_worker[worker_id]

    def _issue_code(self) -> str:
        while True:
            code = "".join(self.rng.choices(_CODE_ALPHABET, k=CODE_LENGTH))
            if code not in self.state.codes:
                self.state.codes.add(code)
                return code

    # -- filtering and qualification -------------------------------------------

    def run_stage_filter(self, stage: Stage) -> tuple[list[FilterOutcome], MosTable]:
        with self._lock:
            cfg = self.state.stage_configs.get(stage)
            if cfg is None:
                raise ConfigurationError(f"stage {stage.value} is not configured")
            reference = None
            if stage is Stage.QUALIFICATION:
                reference = self.state.mos_tables.get(Stage.PRETEST)
                if reference is None:
                    raise OperationalError(
                        "qualification filtering needs the pretest MOS table; "
                        "run the pretest filter first"
                    )
            subs = sorted(
                (s for s in self.state.submissions.values() if s.stage is stage),
                key=lambda s: s.submission_id,
            )
            scorable = [s for s in subs if s.verdict is not Verdict.REJECTED_INVALID
                        or self._was_filter_verdict(s)]
            outcomes, table = dynamic_filter(
                scorable, cfg.thresholds, reference=reference
            )
            by_id = {o.submission_id: o for o in outcomes}
            for s in scorable:
                outcome = by_id[s.submission_id]
                self.state.submissions[s.submission_id] = s.with_verdict(outcome.verdict)
            self.state.outcomes.setdefault(stage, {}).update(by_id)
            self.state.mos_tables[stage] = table
            self._recount_stage(stage)
            return outcomes, table

    def _was_filter_verdict(self, sub: Submission) -> bool:
        # rejected_invalid set by a previous filter run (too few overlapping)
        # is re-scorable; ingestion-invalid submissions are not
        prev = self.state.outcomes.get(sub.stage, {}).get(sub.submission_id)
        return prev is not None and prev.reject_reason is RejectReason.TOO_FEW_OVERLAPPING

    def _recount_stage(self, stage: Stage) -> None:
        cfg = self.state.stage_configs[stage]
        for gid in cfg.groups:
            self.state.counters[(stage, gid)] = sum(
                1
                for s in self.state.submissions.values()
                if s.stage is stage and s.group_id == gid and s.verdict is Verdict.ACCEPTED
            )

    def grade_qualification(self) -> set[str]:
        with self._lock:
            reference = self.state.mos_tables.get(Stage.PRETEST)
            if reference is None:
                raise OperationalError(
                    "qualification grading needs the pretest MOS table; "
                    "run the pretest filter first"
                )
            cfg = self.state.stage_configs.get(Stage.QUALIFICATION)
            thresholds = cfg.thresholds if cfg else None
            granted: set[str] = set()

            def grant(worker_id: str) -> None:
                subject = self.state.subjects.get(worker_id) or Subject(worker_id=worker_id)
                if subject.qualified:
                    return
                self.state.subjects[worker_id] = subject.with_qualified()
                self.platform.grant_qualification(worker_id)
                granted.add(worker_id)

            for sub in sorted(
                self.state.submissions.values(), key=lambda s: s.submission_id
            ):
                if sub.stage is Stage.PRETEST and sub.verdict is Verdict.ACCEPTED:
                    grant(sub.worker_id)
                elif sub.stage is Stage.QUALIFICATION:
                    verdict = sub.verdict
                    if verdict is Verdict.PENDING and thresholds is not None:
                        outcome = self._score_or_invalid(sub, reference, thresholds)
                        verdict = outcome.verdict
                        self.state.submissions[sub.submission_id] = sub.with_verdict(verdict)
                        self.state.outcomes.setdefault(Stage.QUALIFICATION, {})[
                            sub.submission_id
                        ] = outcome
                    if verdict is Verdict.ACCEPTED:
                        grant(sub.worker_id)
            if cfg is not None:
                self._recount_stage(Stage.QUALIFICATION)
            return granted

    @staticmethod
    def _score_or_invalid(sub, reference, thresholds) -> FilterOutcome:
        try:
            return score_submission(sub, reference, thresholds)
        except ScoringError:
            return unscorable_outcome(sub.submission_id)

    # -- exports ----------------------------------------------------------------

    def pooled_mos(self) -> MosTable:
        """MOS over all accepted ratings, pooled across stages."""
        accepted = [
            s for s in sorted(self.state.submissions.values(), key=lambda s: s.submission_id)
            if s.verdict is Verdict.ACCEPTED
        ]
        return compute_mos(accepted)

    def export_dataset(self, out_dir: str | Path) -> dict[str, str]:
        with self._lock:
            if not self.state.mos_tables:
                raise OperationalError("nothing to export: no stage has been filtered")
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            catalog_path = out / "catalog.csv"
            mos_path = out / "mos.csv"
            report_path = out / "filter_report.csv"
            write_catalog_csv(
                (self.state.sequences[sid] for sid in sorted(self.state.sequences)),
                str(catalog_path),
            )
            write_mos_csv(self.pooled_mos(), str(mos_path))
            all_outcomes: list[FilterOutcome] = []
            for stage in STAGE_ORDER:
                stage_outcomes = self.state.outcomes.get(stage, {})
                all_outcomes.extend(
                    stage_outcomes[sid] for sid in sorted(stage_outcomes)
                )
            write_filter_report_csv(all_outcomes, str(report_path))
            return {
                "catalog": str(catalog_path),
                "mos": str(mos_path),
                "filter_report": str(report_path),
            }

    # -- audits -------------------------------------------------------------------

    def audit_formal_assignments_to_unqualified(self) -> list[str]:
        """Tokens of formal-stage assignments issued to unqualified workers.

        Empty on a healthy deployment (stage gating invariant)."""
        with self._lock:
            return [
                token
                for token, rec in self.state.assignments.items()
                if rec.assignment.stage is Stage.FORMAL
                and not rec.worker_qualified_at_issue
            ]

    def verify_counters(self) -> bool:
        with self._lock:
            for (stage, gid), count in self.state.counters.items():
                actual = sum(
                    1
                    for s in self.state.submissions.values()
                    if s.stage is stage and s.group_id == gid
                    and s.verdict is Verdict.ACCEPTED
                )
                if actual != count:
                    return False
            return True

    # -- persistence ----------------------------------------------------------------

    def save(self, store_dir: str | Path) -> None:
        with self._lock:
            store = Path(store_dir)
            store.mkdir(parents=True, exist_ok=True)
            state = {
                "sequences": [
                    sequence_to_row(self.state.sequences[sid])
                    for sid in sorted(self.state.sequences)
                ],
                "stage_configs": {
                    stage.value: stage_config_to_dict(cfg)
                    for stage, cfg in self.state.stage_configs.items()
                },
                "subjects": [
                    subject_to_dict(self.state.subjects[wid])
                    for wid in sorted(self.state.subjects)
                ],
                "assignments": [
                    _assignment_record_to_dict(rec)
                    for _, rec in sorted(self.state.assignments.items())
                ],
                "env_checks": {
                    sid: self.state.env_checks[sid] for sid in sorted(self.state.env_checks)
                },
                "codes": sorted(self.state.codes),
                "counters": [
                    [stage.value, gid, count]
                    for (stage, gid), count in sorted(
                        self.state.counters.items(), key=lambda kv: (kv[0][0].value, kv[0][1])
                    )
                ],
                "mos_tables": {
                    stage.value: mos_table_to_dict(table)
                    for stage, table in self.state.mos_tables.items()
                },
                "outcomes": {
                    stage.value: {
                        sid: _outcome_to_dict(o) for sid, o in sorted(stage_map.items())
                    }
                    for stage, stage_map in self.state.outcomes.items()
                },
                "next_submission_ord": self.state.next_submission_ord,
            }
            (store / "state.json").write_text(
                json.dumps(state, indent=2, sort_keys=True) + "\n"
            )
            write_submissions_jsonl(
                (
                    self.state.submissions[sid]
                    for sid in sorted(self.state.submissions)
                ),
                str(store / "submissions.jsonl"),
            )

    @classmethod
    def load(
        cls,
        store_dir: str | Path,
        *,
        platform: CrowdPlatform | None = None,
        clock: Callable[[], float] = time.time,
        rng: random.Random | None = None,
        assignment_expiry_s: float = DEFAULT_EXPIRY_S,
        media_base_url: str = "media/",
    ) -> "StudyService":
        store = Path(store_dir)
        raw = json.loads((store / "state.json").read_text())
        state = StudyState()
        state.sequences = {
            row["id"]: sequence_from_row(row) for row in raw["sequences"]
        }
        state.stage_configs = {
            Stage(key): stage_config_from_dict(cfg)
            for key, cfg in raw["stage_configs"].items()
        }
        state.subjects = {
            d["worker_id"]: subject_from_dict(d) for d in raw["subjects"]
        }
        for d in raw["assignments"]:
            rec = _assignment_record_from_dict(d)
            state.assignments[rec.assignment.session_token] = rec
            if rec.status == "active":
                state.active_by_worker[rec.assignment.worker_id] = (
                    rec.assignment.session_token
                )
        state.env_checks = dict(raw.get("env_checks", {}))
        state.codes = set(raw["codes"])
        state.counters = {
            (Stage(stage), gid): count for stage, gid, count in raw["counters"]
        }
        state.mos_tables = {
            Stage(key): mos_table_from_dict(d) for key, d in raw["mos_tables"].items()
        }
        state.outcomes = {
            Stage(key): {sid: _outcome_from_dict(o) for sid, o in stage_map.items()}
            for key, stage_map in raw["outcomes"].items()
        }
        state.next_submission_ord = int(raw["next_submission_ord"])
        subs_path = store / "submissions.jsonl"
        if subs_path.exists():
            for sub in read_submissions_jsonl(str(subs_path)):
                state.submissions[sub.submission_id] = sub
                state.submission_keys.add((sub.worker_id, sub.stage, sub.group_id))
        return cls(
            state,
            platform=platform,
            clock=clock,
            rng=rng,
            assignment_expiry_s=assignment_expiry_s,
            media_base_url=media_base_url,
        )


def _assignment_record_to_dict(rec: AssignmentRecord) -> dict[str, Any]:
    a = rec.assignment
    return {
        "session_token": a.session_token,
        "worker_id": a.worker_id,
        "stage": a.stage.value,
        "group_id": a.group_id,
        "playlist": [
            {"sequence_id": p.sequence_id, "media_url": p.media_url, "duration_s": p.duration_s}
            for p in a.playlist
        ],
        "issued_at": a.issued_at,
        "expires_at": a.expires_at,
        "worker_qualified_at_issue": rec.worker_qualified_at_issue,
        "status": rec.status,
        "submission_id": rec.submission_id,
        "code": rec.code,
        "code_issued_at": rec.code_issued_at,
        "rejection": None
        if rec.rejection is None
        else {"reason": rec.rejection.reason, "problems": list(rec.rejection.problems)},
    }


def _assignment_record_from_dict(d: Mapping[str, Any]) -> AssignmentRecord:
    assignment = TaskAssignment(
        session_token=d["session_token"],
        worker_id=d["worker_id"],
        stage=Stage(d["stage"]),
        group_id=d["group_id"],
        playlist=tuple(
            PlaylistItem(
                sequence_id=p["sequence_id"],
                media_url=p["media_url"],
                duration_s=float(p["duration_s"]),
            )
            for p in d["playlist"]
        ),
        issued_at=float(d["issued_at"]),
        expires_at=float(d["expires_at"]),
    )
    rejection = None
    if d.get("rejection"):
        rejection = SubmitRejection(
            reason=d["rejection"]["reason"],
            problems=tuple(d["rejection"]["problems"]),
        )
    return AssignmentRecord(
        assignment=assignment,
        worker_qualified_at_issue=bool(d["worker_qualified_at_issue"]),
        status=d["status"],
        submission_id=d.get("submission_id"),
        code=d.get("code"),
        code_issued_at=d.get("code_issued_at"),
        rejection=rejection,
    )


def _outcome_to_dict(o: FilterOutcome) -> dict[str, Any]:
    return {
        "submission_id": o.submission_id,
        "avg_srocc": o.avg_srocc,
        "avg_std": o.avg_std,
        "per_dimension_srocc": list(o.per_dimension_srocc),
        "per_dimension_std": list(o.per_dimension_std),
        "accepted": o.accepted,
        "reject_reason": None if o.reject_reason is None else o.reject_reason.value,
    }


def _outcome_from_dict(d: Mapping[str, Any]) -> FilterOutcome:
    return FilterOutcome(
        submission_id=d["submission_id"],
        avg_srocc=float(d["avg_srocc"]),
        avg_std=float(d["avg_std"]),
        per_dimension_srocc=tuple(float(v) for v in d["per_dimension_srocc"]),
        per_dimension_std=tuple(float(v) for v in d["per_dimension_std"]),
        accepted=bool(d["accepted"]),
        reject_reason=None
        if d.get("reject_reason") is None
        else RejectReason(d["reject_reason"]),
    )
