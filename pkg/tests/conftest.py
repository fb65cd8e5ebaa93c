import random

import pytest

from avqstudy.domain import (
    InteractionEvent,
    Origin,
    RatingRecord,
    Sequence,
    Stage,
    StageConfig,
    Submission,
)
from avqstudy.server.service import StudyService


def make_sequence(i: int, group_id: str = "g1", duration: float = 10.0) -> Sequence:
    return Sequence(
        id=f"s{i:04d}",
        group_id=group_id,
        duration_s=duration,
        width=1920,
        height=1080,
        audio_semantics=frozenset(["speech"]),
        pseudo_audio_pq=0.5,
        pseudo_audio_ce=0.5,
        pseudo_video_q=0.5,
        origin=Origin.SAMPLED,
    )


def make_catalog(n: int, group_id: str = "g1") -> list[Sequence]:
    return [make_sequence(i, group_id) for i in range(n)]


def make_records(
    seq_ids, q1=3.0, q2=3.0, q3=3.0, q4=50, per_sequence=None
) -> tuple[RatingRecord, ...]:
    """per_sequence: optional {seq_id: (q1, q2, q3, q4)} overrides."""
    records = []
    for sid in seq_ids:
        vals = (per_sequence or {}).get(sid, (q1, q2, q3, q4))
        records.append(RatingRecord.from_decimals(sid, *vals))
    return tuple(records)


def full_watch_log(seq_ids, duration: float = 10.0) -> tuple[InteractionEvent, ...]:
    events = []
    t = 0.0
    for sid in seq_ids:
        events.append(InteractionEvent(t=t, kind="play", sequence_id=sid))
        t += duration
        events.append(InteractionEvent(t=t, kind="ended", sequence_id=sid))
        t += 2.0
    return tuple(events)


def make_submission(
    seq_ids,
    submission_id="sub-1",
    worker_id="w1",
    group_id="g1",
    stage=Stage.PRETEST,
    records=None,
    watch_complete=True,
) -> Submission:
    return Submission(
        submission_id=submission_id,
        worker_id=worker_id,
        group_id=group_id,
        stage=stage,
        records=records if records is not None else make_records(seq_ids),
        user_agent="tests",
        interaction_log=full_watch_log(seq_ids),
        watch_complete=watch_complete,
    )


@pytest.fixture
def small_stage():
    """Catalog of 6 sequences in two groups of 3, with a matching service."""
    catalog = [make_sequence(i, "g1") for i in range(3)] + [
        make_sequence(i + 3, "g2") for i in range(3)
    ]
    cfg = StageConfig(
        stage=Stage.PRETEST,
        groups={
            "g1": tuple(s.id for s in catalog[:3]),
            "g2": tuple(s.id for s in catalog[3:]),
        },
        group_size=3,
    )
    service = StudyService(rng=random.Random(0))
    service.install_catalog(catalog)
    service.install_stage(cfg)
    return catalog, cfg, service
