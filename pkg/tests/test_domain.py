import dataclasses
import json

import pytest
from hypothesis import given, strategies as st

from avqstudy.domain import (
    SEMANTIC_SUBSETS,
    InteractionEvent,
    MosEntry,
    MosTable,
    Origin,
    RatingRecord,
    Sequence,
    Stage,
    StageConfig,
    Subject,
    Submission,
    Verdict,
    mos_table_from_dict,
    mos_table_to_dict,
    rating_from_dict,
    rating_to_dict,
    semantics_from_key,
    semantics_key,
    sequence_from_row,
    sequence_to_row,
    stage_config_from_dict,
    stage_config_to_dict,
    subject_from_dict,
    subject_to_dict,
    submission_from_dict,
    submission_to_dict,
    validate_submission,
    watch_complete_from_log,
)
from avqstudy.errors import ConfigurationError, ScaleError

from conftest import make_catalog, make_records, make_sequence, make_submission


# --- semantics ---------------------------------------------------------------

def test_seven_semantic_subsets_are_canonical():
    assert len(SEMANTIC_SUBSETS) == 7
    for key in SEMANTIC_SUBSETS:
        assert semantics_key(semantics_from_key(key)) == key


def test_semantics_rejects_empty_and_unknown():
    with pytest.raises(ValueError):
        semantics_key(set())
    with pytest.raises(ValueError):
        semantics_key({"speech", "noise"})


# --- Sequence ----------------------------------------------------------------

def test_sequence_requires_positive_duration():
    with pytest.raises(ValueError):
        dataclasses.replace(make_sequence(0), duration_s=0.0)


def test_short_sequences_are_accepted():
    seq = dataclasses.replace(make_sequence(0), duration_s=8.7)
    assert seq.duration_s == 8.7


def test_sequence_csv_row_trip():
    seq = make_sequence(3)
    assert sequence_from_row(sequence_to_row(seq)) == seq


@given(
    duration=st.floats(min_value=0.5, max_value=60.0, allow_nan=False),
    pq=st.floats(min_value=-10, max_value=10, allow_nan=False),
    subset=st.sampled_from(SEMANTIC_SUBSETS),
    origin=st.sampled_from([Origin.SAMPLED, Origin.MANUAL]),
)
def test_sequence_row_trip_property(duration, pq, subset, origin):
    seq = Sequence(
        id="x1",
        group_id="g9",
        duration_s=duration,
        width=1280,
        height=720,
        audio_semantics=semantics_from_key(subset),
        pseudo_audio_pq=pq,
        pseudo_audio_ce=0.0,
        pseudo_video_q=1.0,
        origin=origin,
    )
    assert sequence_from_row(sequence_to_row(seq)) == seq


# --- RatingRecord ------------------------------------------------------------

def test_rating_from_decimals_quantizes_exactly():
    rec = RatingRecord.from_decimals("s1", 4.3, 1.0, 5.0, 37)
    assert (rec.q1_tenths, rec.q2_tenths, rec.q3_tenths) == (43, 10, 50)
    assert rec.q1_avqa == 4.3
    assert rec.video_attention_pct == 63


@pytest.mark.parametrize("bad", [5.3, 0.9, 3.14, -1.0])
def test_rating_from_decimals_rejects_off_scale(bad):
    with pytest.raises(ScaleError):
        RatingRecord.from_decimals("s1", bad, 3.0, 3.0, 50)


def test_rating_attention_bounds():
    with pytest.raises(ScaleError):
        RatingRecord.from_decimals("s1", 3.0, 3.0, 3.0, 101)


@given(
    tenths=st.integers(min_value=10, max_value=50),
    att=st.integers(min_value=0, max_value=100),
)
def test_rating_tenths_stay_integral(tenths, att):
    rec = RatingRecord.from_decimals("s1", tenths / 10.0, 3.0, 3.0, att)
    # quantization invariant: 10*q1 is an integer after ingestion
    assert rec.q1_tenths == tenths
    assert abs(rec.q1_avqa * 10 - round(rec.q1_avqa * 10)) < 1e-9
    assert rating_from_dict(rating_to_dict(rec)) == (rec, [])


def test_rating_from_dict_flags_off_grid():
    rec, problems = rating_from_dict(
        {"sequence_id": "s1", "q1_avqa": 3.14, "q2_av_vqa": 3.0,
         "q3_av_aqa": 3.0, "q4_audio_attention_pct": 50}
    )
    assert problems and "off the 0.1 grid" in problems[0]
    assert rec.q1_tenths == 31


# --- Submission validation -----------------------------------------------------

@pytest.fixture
def group_of_30():
    catalog = make_catalog(30)
    cfg = StageConfig(
        stage=Stage.PRETEST,
        groups={"g1": tuple(s.id for s in catalog)},
        group_size=30,
    )
    return catalog, cfg


def test_valid_submission_passes(group_of_30):
    catalog, cfg = group_of_30
    sub = make_submission([s.id for s in catalog])
    report = validate_submission(sub, cfg)
    assert report.is_valid
    assert report.verdict is Verdict.PENDING


def test_out_of_scale_value_is_invalid(group_of_30):
    catalog, cfg = group_of_30
    ids = [s.id for s in catalog]
    records = list(make_records(ids))
    records[0] = dataclasses.replace(records[0], q1_tenths=53)  # q1 = 5.3
    sub = make_submission(ids, records=tuple(records))
    report = validate_submission(sub, cfg)
    assert not report.is_valid
    assert report.verdict is Verdict.REJECTED_INVALID
    assert any("outside [1.0, 5.0]" in p for p in report.scale_errors)


def test_duplicate_worker_group_stage_is_invalid(group_of_30):
    catalog, cfg = group_of_30
    ids = [s.id for s in catalog]
    sub = make_submission(ids, submission_id="sub-2")
    prior = {("w1", Stage.PRETEST, "g1")}
    report = validate_submission(sub, cfg, prior)
    assert report.duplicate_submission
    assert not report.is_valid


def test_wrong_coverage_is_invalid(group_of_30):
    catalog, cfg = group_of_30
    ids = [s.id for s in catalog]
    short = make_submission(ids, records=make_records(ids[:29]))
    report = validate_submission(short, cfg)
    assert report.missing_sequences == (ids[29],)
    assert not report.is_valid

    stray = make_submission(ids, records=make_records(ids[:29] + ["zzz"]))
    report = validate_submission(stray, cfg)
    assert "zzz" in report.unexpected_sequences

    doubled = make_submission(ids, records=make_records(ids[:29] + [ids[0]]))
    report = validate_submission(doubled, cfg)
    assert report.duplicated_sequences == (ids[0],)


def test_incomplete_watch_is_invalid(group_of_30):
    catalog, cfg = group_of_30
    sub = make_submission([s.id for s in catalog], watch_complete=False)
    report = validate_submission(sub, cfg)
    assert report.incomplete_watch
    assert report.verdict is Verdict.REJECTED_INVALID


def test_unknown_group_is_configuration_error(group_of_30):
    catalog, cfg = group_of_30
    sub = make_submission([s.id for s in catalog], group_id="nope")
    with pytest.raises(ConfigurationError):
        validate_submission(sub, cfg)


# --- watch-time derivation ------------------------------------------------------

def test_watch_complete_requires_full_duration():
    durations = {"a": 10.0}
    partial = [
        InteractionEvent(t=0.0, kind="play", sequence_id="a"),
        InteractionEvent(t=4.0, kind="pause", sequence_id="a"),
    ]
    assert not watch_complete_from_log(partial, durations)
    resumed = partial + [
        InteractionEvent(t=6.0, kind="play", sequence_id="a"),
        InteractionEvent(t=12.0, kind="ended", sequence_id="a"),
    ]
    assert watch_complete_from_log(resumed, durations)


def test_watch_time_sums_across_intervals():
    durations = {"a": 10.0, "b": 10.0}
    log = [
        InteractionEvent(t=0.0, kind="play", sequence_id="a"),
        InteractionEvent(t=10.0, kind="ended", sequence_id="a"),
        InteractionEvent(t=11.0, kind="play", sequence_id="b"),
        InteractionEvent(t=15.0, kind="pause", sequence_id="b"),
    ]
    assert not watch_complete_from_log(log, durations)


# --- StageConfig ----------------------------------------------------------------

def test_stage_config_rejects_wrong_group_size():
    with pytest.raises(ConfigurationError):
        StageConfig(stage=Stage.PRETEST, groups={"g1": ("a", "b")}, group_size=3)


def test_stage_config_rejects_overlapping_groups():
    with pytest.raises(ConfigurationError):
        StageConfig(
            stage=Stage.PRETEST,
            groups={"g1": ("a", "b", "c"), "g2": ("c", "d", "e")},
            group_size=3,
        )


def test_stage_config_partition_is_exact():
    cfg = StageConfig(
        stage=Stage.FORMAL,
        groups={"g1": ("a", "b", "c"), "g2": ("d", "e", "f")},
        group_size=3,
    )
    ids = [sid for members in cfg.groups.values() for sid in members]
    assert len(ids) == len(set(ids)) == 6


# --- Subject evolution ------------------------------------------------------------

def test_subject_qualified_only_ratchets_up():
    s = Subject(worker_id="w1")
    q = s.with_qualified()
    assert q.qualified and not s.qualified
    assert q.with_qualified() is q


def test_subject_history_grows():
    s = Subject(worker_id="w1").with_history(Stage.PRETEST, "g1")
    s2 = s.with_history(Stage.FORMAL, "g2")
    assert (Stage.PRETEST, "g1") in s2.history
    assert len(s2.history) == 2


# --- serialization round-trips ------------------------------------------------------

def test_submission_json_round_trip(group_of_30):
    catalog, _ = group_of_30
    sub = make_submission([s.id for s in catalog]).with_verdict(Verdict.ACCEPTED)
    data = json.loads(json.dumps(submission_to_dict(sub)))
    assert submission_from_dict(data) == sub


def test_subject_round_trip():
    s = Subject(
        worker_id="w1",
        approval_rate_pct=98.5,
        approved_hits=1234,
        qualified=True,
        history=frozenset({(Stage.PRETEST, "g1"), (Stage.FORMAL, "g2")}),
    )
    assert subject_from_dict(json.loads(json.dumps(subject_to_dict(s)))) == s


def test_stage_config_round_trip():
    cfg = StageConfig(
        stage=Stage.QUALIFICATION,
        groups={"q1": ("a", "b", "c")},
        group_size=3,
    )
    back = stage_config_from_dict(json.loads(json.dumps(stage_config_to_dict(cfg))))
    assert back.stage is cfg.stage
    assert dict(back.groups) == dict(cfg.groups)
    assert back.thresholds == cfg.thresholds
    assert back.eligibility == cfg.eligibility


def test_mos_table_round_trip():
    table = MosTable(
        entries={
            "s1": MosEntry(3.5, 3.6, 3.4, 51.0, 12),
            "s2": MosEntry(1.0, 5.0, 3.0, 0.0, 1),
        }
    )
    back = mos_table_from_dict(json.loads(json.dumps(mos_table_to_dict(table))))
    assert dict(back.entries) == dict(table.entries)


def test_mos_entry_bounds():
    with pytest.raises(ValueError):
        MosEntry(5.2, 3.0, 3.0, 50.0, 1)
    with pytest.raises(ValueError):
        MosEntry(3.0, 3.0, 3.0, 50.0, 0)
