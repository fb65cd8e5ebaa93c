"""End-to-end study simulation: drives assignment, rating, filtering,
qualification, and export against either an in-process service or a live
server, and reports acceptance rates and MOS recovery error.

The in-process path is single-threaded and fully deterministic for a
fixed plan and seed.
"""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

import numpy as np

from .config import StudyConfig, build_stage_configs
from .domain import MosTable, Stage, Verdict, rating_to_dict
from .server.service import (
    CompletionCode,
    Denial,
    StudyService,
    TaskAssignment,
)
from .simulator import (
    GroundTruthEntry,
    QualityDistribution,
    RaterModel,
    simulate_rater,
    synth_catalog,
)
from .stats import read_mos_csv

ELIGIBLE_PROFILE = {"approval_rate_pct": 99.0, "approved_hits": 1000}
SIM_USER_AGENT = "avqstudy-simulator/1.0"


class StudyClient(Protocol):
    """Transport-agnostic view of the study API (tagged JSON bodies)."""

    def request_task(self, worker_id: str, stage: str, profile: Mapping[str, Any]) -> dict: ...

    def submit(self, token: str, records: list[dict], interaction_log: list[dict],
               user_agent: str) -> dict: ...

    def run_filter(self, stage: str) -> dict: ...

    def qualify(self) -> dict: ...


class InProcessClient:
    """Adapter giving the service the same tagged-body surface as HTTP."""

    def __init__(self, service: StudyService) -> None:
        self.service = service

    def request_task(self, worker_id: str, stage: str, profile: Mapping[str, Any]) -> dict:
        result = self.service.request_task(
            worker_id, Stage(stage), profile["approval_rate_pct"], profile["approved_hits"]
        )
        if isinstance(result, Denial):
            return {"denial": {"reason": result.reason, "detail": result.detail}}
        assert isinstance(result, TaskAssignment)
        return {
            "assignment": {
                "session_token": result.session_token,
                "group_id": result.group_id,
                "stage": result.stage.value,
                "playlist": [
                    {"sequence_id": p.sequence_id, "duration_s": p.duration_s}
                    for p in result.playlist
                ],
            }
        }

    def submit(self, token: str, records: list[dict], interaction_log: list[dict],
               user_agent: str) -> dict:
        result = self.service.submit(
            token, records, interaction_log, user_agent=user_agent
        )
        if isinstance(result, CompletionCode):
            return {"completion_code": result.code, "submission_id": result.submission_id}
        return {"rejection": {"reason": result.reason, "problems": list(result.problems)}}

    def run_filter(self, stage: str) -> dict:
        outcomes, table = self.service.run_stage_filter(Stage(stage))
        return {
            "stage": stage,
            "scored": len(outcomes),
            "accepted": sum(1 for o in outcomes if o.accepted),
            "mos_sequences": len(table),
        }

    def qualify(self) -> dict:
        return {"granted": sorted(self.service.grade_qualification())}


class HttpClient:
    """Drives a live server over the documented HTTP+JSON endpoints."""

    def __init__(self, base_url: str, admin_token: str | None = None) -> None:
        import httpx

        self._http = httpx.Client(base_url=base_url, timeout=30.0)
        self._admin_headers = (
            {"Authorization": f"Bearer {admin_token}"} if admin_token else {}
        )

    def request_task(self, worker_id: str, stage: str, profile: Mapping[str, Any]) -> dict:
        resp = self._http.post(
            "/tasks/request",
            json={"worker_id": worker_id, "stage": stage, "profile": dict(profile)},
        )
        resp.raise_for_status()
        return resp.json()

    def submit(self, token: str, records: list[dict], interaction_log: list[dict],
               user_agent: str) -> dict:
        resp = self._http.post(
            "/tasks/submit",
            json={
                "token": token,
                "records": records,
                "interaction_log": interaction_log,
                "user_agent": user_agent,
            },
        )
        resp.raise_for_status()
        return resp.json()

    def run_filter(self, stage: str) -> dict:
        resp = self._http.post(
            "/admin/filter", json={"stage": stage}, headers=self._admin_headers
        )
        resp.raise_for_status()
        return resp.json()

    def qualify(self) -> dict:
        resp = self._http.post("/admin/qualify", headers=self._admin_headers)
        resp.raise_for_status()
        return resp.json()

    def export(self) -> dict:
        resp = self._http.get("/admin/export", headers=self._admin_headers)
        resp.raise_for_status()
        return resp.json()


@dataclass(frozen=True)
class CohortSpec:
    model: RaterModel
    count: int


@dataclass(frozen=True)
class SimulationPlan:
    """Cohort composition and study layout for one simulated campaign."""

    pretest_cohort: tuple[CohortSpec, ...]
    qualification_cohort: tuple[CohortSpec, ...] = ()
    seed: int = 0
    n_sequences: int = 180
    group_size: int = 30
    pretest_sequences: int = 120
    pretest_tasks_per_worker: int = 1
    formal_tasks_per_worker: int = 1
    distribution: QualityDistribution = QualityDistribution()
    pseudo_label_corr: float = 0.7

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SimulationPlan":
        def cohort(items: Any) -> tuple[CohortSpec, ...]:
            return tuple(
                CohortSpec(model=RaterModel.parse(i["model"]), count=int(i["count"]))
                for i in items
            )

        dist = data.get("distribution", {})
        return cls(
            pretest_cohort=cohort(data["pretest_cohort"]),
            qualification_cohort=cohort(data.get("qualification_cohort", [])),
            seed=int(data.get("seed", 0)),
            n_sequences=int(data.get("n_sequences", 180)),
            group_size=int(data.get("group_size", 30)),
            pretest_sequences=int(data.get("pretest_sequences", 120)),
            pretest_tasks_per_worker=int(data.get("pretest_tasks_per_worker", 1)),
            formal_tasks_per_worker=int(data.get("formal_tasks_per_worker", 1)),
            distribution=QualityDistribution(kind=dist.get("kind", "gaussian")),
            pseudo_label_corr=float(data.get("pseudo_label_corr", 0.7)),
        )


@dataclass
class SimulationReport:
    seed: int
    per_model: dict[str, dict[str, float]] = field(default_factory=dict)
    stage_rates: dict[str, dict[str, float]] = field(default_factory=dict)
    mos_mae: dict[str, float] = field(default_factory=dict)
    attention_mae: float = math.nan
    min_ratings_per_sequence: int = 0
    rated_sequences: int = 0
    qualified_workers: int = 0
    formal_denials: int = 0
    formal_assignments_to_unqualified: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "per_model": self.per_model,
            "stage_rates": self.stage_rates,
            "mos_mae": self.mos_mae,
            "attention_mae": self.attention_mae,
            "min_ratings_per_sequence": self.min_ratings_per_sequence,
            "rated_sequences": self.rated_sequences,
            "qualified_workers": self.qualified_workers,
            "formal_denials": self.formal_denials,
            "formal_assignments_to_unqualified": self.formal_assignments_to_unqualified,
        }

    def summary(self) -> str:
        lines = [f"simulation seed={self.seed}"]
        for stage in ("pretest", "qualification", "formal"):
            r = self.stage_rates.get(stage)
            if r:
                lines.append(
                    f"  {stage}: {int(r['accepted'])}/{int(r['scored'])} accepted"
                    f" ({r['rate']:.1%})"
                )
        for model, r in sorted(self.per_model.items()):
            lines.append(
                f"  {model}: {int(r['accepted'])}/{int(r['submitted'])} accepted"
                f" ({r['rate']:.1%})"
            )
        if self.mos_mae:
            mae = ", ".join(f"{k}={v:.4f}" for k, v in self.mos_mae.items())
            lines.append(f"  MOS MAE vs truth: {mae}")
            lines.append(
                f"  rated sequences: {self.rated_sequences}"
                f" (min {self.min_ratings_per_sequence} ratings each)"
            )
        lines.append(f"  qualified workers: {self.qualified_workers}")
        if self.formal_assignments_to_unqualified is not None:
            lines.append(
                "  formal assignments to unqualified workers: "
                f"{self.formal_assignments_to_unqualified}"
            )
        return "\n".join(lines)


def complete_watch_log(playlist: list[dict], start: float = 0.0) -> list[dict]:
    """Interaction log in which every sequence plays through exactly once."""
    events = []
    t = start
    for item in playlist:
        events.append({"t": t, "kind": "play", "sequence_id": item["sequence_id"]})
        t += float(item["duration_s"])
        events.append({"t": t, "kind": "ended", "sequence_id": item["sequence_id"]})
        t += 5.0  # rating time between sequences
    return events


@dataclass
class _Worker:
    worker_id: str
    model: RaterModel
    rng: np.random.Generator


def _spawn_workers(
    cohort: tuple[CohortSpec, ...], prefix: str, seed_seq: np.random.SeedSequence
) -> list[_Worker]:
    total = sum(spec.count for spec in cohort)
    children = seed_seq.spawn(total)
    workers = []
    i = 0
    for spec in cohort:
        for k in range(spec.count):
            workers.append(
                _Worker(
                    worker_id=f"w-{prefix}-{spec.model.kind}-{k:03d}",
                    model=spec.model,
                    rng=np.random.default_rng(children[i]),
                )
            )
            i += 1
    return workers


def run_study_simulation(
    plan: SimulationPlan,
    client: StudyClient | None = None,
    service: StudyService | None = None,
) -> SimulationReport:
    """Run the full pretest -> qualification -> formal pipeline.

    Without an explicit client an in-process service is built from the
    plan. When a service is available (in-process mode), the report also
    includes MOS recovery error against ground truth and the
    formal-assignment audit.
    """
    catalog, truth = synth_catalog(
        plan.n_sequences,
        distribution=plan.distribution,
        seed=plan.seed,
        pseudo_label_corr=plan.pseudo_label_corr,
    )
    if client is None:
        if service is None:
            service = build_study_service(catalog, plan)
        client = InProcessClient(service)
    elif service is None and isinstance(client, InProcessClient):
        service = client.service

    report = SimulationReport(seed=plan.seed)
    seed_root = np.random.SeedSequence(plan.seed)
    pre_seeds, qual_seeds = seed_root.spawn(2)
    pretest_workers = _spawn_workers(plan.pretest_cohort, "pre", pre_seeds)
    qual_workers = _spawn_workers(plan.qualification_cohort, "qual", qual_seeds)
    model_of: dict[str, str] = {}

    def do_task(worker: _Worker, stage: str) -> str | None:
        """Request and complete one task; returns the denial reason if any."""
        resp = client.request_task(worker.worker_id, stage, ELIGIBLE_PROFILE)
        if "denial" in resp:
            return resp["denial"]["reason"]
        assignment = resp["assignment"]
        playlist = assignment["playlist"]
        ids = [item["sequence_id"] for item in playlist]
        records = simulate_rater(worker.model, truth, ids, worker.rng)
        client.submit(
            assignment["session_token"],
            [rating_to_dict(r) for r in records],
            complete_watch_log(playlist),
            SIM_USER_AGENT,
        )
        return None

    qualified_seen: set[str] = set()

    # pretest
    for worker in pretest_workers:
        model_of[worker.worker_id] = worker.model.describe()
        for _ in range(plan.pretest_tasks_per_worker):
            if do_task(worker, "pretest") is not None:
                break
    f = client.run_filter("pretest")
    report.stage_rates["pretest"] = _rate(f)
    qualified_seen.update(client.qualify()["granted"])

    # qualification: each new subject rates one pretest group
    for worker in qual_workers:
        model_of[worker.worker_id] = worker.model.describe()
        do_task(worker, "qualification")
    f = client.run_filter("qualification")
    report.stage_rates["qualification"] = _rate(f)
    qualified_seen.update(client.qualify()["granted"])

    # formal: every known worker attempts; only qualified get assignments
    for worker in pretest_workers + qual_workers:
        for _ in range(plan.formal_tasks_per_worker):
            reason = do_task(worker, "formal")
            if reason is not None:
                report.formal_denials += 1
                break
    f = client.run_filter("formal")
    report.stage_rates["formal"] = _rate(f)
    report.qualified_workers = len(qualified_seen)

    if service is not None:
        _fill_from_service(report, service, model_of, truth)
    return report


class _Counter:
    """Deterministic clock: strictly increasing seconds."""

    def __init__(self) -> None:
        self.t = 0.0

    def __call__(self) -> float:
        self.t += 1.0
        return self.t


def build_study_service(catalog: list, plan: SimulationPlan) -> StudyService:
    """Deterministic in-process service with the plan's stage layout."""
    import random as _random

    cfg = StudyConfig(
        group_size=plan.group_size,
        pretest_sequences=plan.pretest_sequences,
        grouping_seed=plan.seed,
    )
    homed, stage_configs = build_stage_configs(catalog, cfg)
    service = StudyService(rng=_random.Random(plan.seed), clock=_Counter())
    service.install_catalog(homed)
    for stage_cfg in stage_configs.values():
        service.install_stage(stage_cfg)
    return service


def _rate(filter_resp: Mapping[str, Any]) -> dict[str, float]:
    scored = int(filter_resp["scored"])
    accepted = int(filter_resp["accepted"])
    return {
        "scored": float(scored),
        "accepted": float(accepted),
        "rate": accepted / scored if scored else 0.0,
    }


def _fill_from_service(
    report: SimulationReport,
    service: StudyService,
    model_of: Mapping[str, str],
    truth: Mapping[str, GroundTruthEntry],
) -> None:
    tally: dict[str, list[int]] = {}
    for sub in service.state.submissions.values():
        desc = model_of.get(sub.worker_id, "unknown")
        entry = tally.setdefault(desc, [0, 0])
        entry[0] += 1
        if sub.verdict is Verdict.ACCEPTED:
            entry[1] += 1
    report.per_model = {
        desc: {
            "submitted": float(total),
            "accepted": float(acc),
            "rate": acc / total if total else 0.0,
        }
        for desc, (total, acc) in tally.items()
    }
    table = service.pooled_mos()
    _fill_recovery(report, table, truth)
    report.formal_assignments_to_unqualified = len(
        service.audit_formal_assignments_to_unqualified()
    )


def _fill_recovery(
    report: SimulationReport, table: MosTable, truth: Mapping[str, GroundTruthEntry]
) -> None:
    if not len(table):
        return
    errs = {"avqa": [], "av_vqa": [], "av_aqa": []}
    att_errs = []
    min_n = None
    for sid, entry in table.items():
        t = truth[sid]
        errs["avqa"].append(abs(entry.mos_avqa - t.true_avqa))
        errs["av_vqa"].append(abs(entry.mos_av_vqa - t.true_vqa))
        errs["av_aqa"].append(abs(entry.mos_av_aqa - t.true_aqa))
        att_errs.append(abs(entry.mean_audio_attention_pct - t.true_attention))
        min_n = entry.n_ratings if min_n is None else min(min_n, entry.n_ratings)
    report.mos_mae = {dim: float(np.mean(v)) for dim, v in errs.items()}
    report.attention_mae = float(np.mean(att_errs))
    report.min_ratings_per_sequence = int(min_n or 0)
    report.rated_sequences = len(table)


def load_simulation_report_inputs(export_dir: str | Path) -> tuple[MosTable, dict]:
    """Read the exported MOS table and filter report (same-host HTTP runs)."""
    export = Path(export_dir)
    table = read_mos_csv(str(export / "mos.csv"))
    verdicts: dict[str, str] = {}
    with open(export / "filter_report.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            verdicts[row["submission_id"]] = row["verdict"]
    return table, verdicts


def write_report(report: SimulationReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
