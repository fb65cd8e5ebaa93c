import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avqstudy.simulator import (
    GroundTruthEntry,
    QualityDistribution,
    RaterModel,
    simulate_rater,
    synth_catalog,
)
from avqstudy.stats import srocc


# --- RaterModel ------------------------------------------------------------

def test_rater_model_parse_forms():
    assert RaterModel.parse("random_uniform").kind == "random_uniform"
    assert RaterModel.parse("faithful(0.25)").noise_sd == 0.25
    b = RaterModel.parse("biased(0.5,1.1,0.2)")
    assert (b.offset, b.scale, b.noise_sd) == (0.5, 1.1, 0.2)
    assert RaterModel.parse("constant(4.0)").value == 4.0
    assert RaterModel.parse("midrange(0.05)").noise_sd == 0.05


def test_rater_model_rejects_unknown_kind():
    with pytest.raises(ValueError):
        RaterModel(kind="oracle")


def test_ground_truth_bounds():
    with pytest.raises(ValueError):
        GroundTruthEntry(0.5, 3.0, 3.0, 50.0)
    with pytest.raises(ValueError):
        GroundTruthEntry(3.0, 3.0, 3.0, 150.0)


# --- synth_catalog ------------------------------------------------------------

def test_synth_catalog_gaussian_mean():
    # mu = 3.47, sd = 0.72, n = 1620 -> sample mean within 3*sd/sqrt(n) ~ 0.054
    _, truth = synth_catalog(1620, seed=123)
    mean = np.mean([t.true_avqa for t in truth.values()])
    assert abs(mean - 3.47) < 0.06


def test_synth_catalog_single_row():
    catalog, truth = synth_catalog(1, seed=0)
    assert len(catalog) == 1 and len(truth) == 1


def test_synth_catalog_deterministic():
    a_cat, a_truth = synth_catalog(50, seed=9)
    b_cat, b_truth = synth_catalog(50, seed=9)
    assert a_cat == b_cat
    assert a_truth == b_truth
    c_cat, _ = synth_catalog(50, seed=10)
    assert c_cat != a_cat


def test_synth_catalog_pseudo_labels_track_truth():
    catalog, truth = synth_catalog(2000, seed=4, pseudo_label_corr=0.7)
    vq = [s.pseudo_video_q for s in catalog]
    true_v = [truth[s.id].true_vqa for s in catalog]
    # rank correlation should land in the vicinity of the design parameter
    assert 0.5 < srocc(vq, true_v) < 0.85
    pq = [s.pseudo_audio_pq for s in catalog]
    true_a = [truth[s.id].true_aqa for s in catalog]
    assert 0.5 < srocc(pq, true_a) < 0.85


def test_synth_catalog_skewed_distribution():
    _, truth = synth_catalog(
        3000, distribution=QualityDistribution(kind="skewed"), seed=2
    )
    vals = np.array([t.true_avqa for t in truth.values()])
    assert np.median(vals) < np.mean(vals) + 0.2  # right-skewed beta(2,8)
    assert vals.min() >= 1.0 and vals.max() <= 5.0


def test_synth_catalog_requires_positive_n():
    with pytest.raises(ValueError):
        synth_catalog(0)


# --- simulate_rater --------------------------------------------------------------

@pytest.fixture
def truth_group():
    _, truth = synth_catalog(30, seed=77)
    return truth, list(truth)


def test_constant_rater_emits_identical_records(truth_group):
    truth, ids = truth_group
    rng = np.random.default_rng(0)
    records = simulate_rater(RaterModel(kind="constant", value=3.0), truth, ids, rng)
    assert len(records) == 30
    assert {(r.q1_tenths, r.q2_tenths, r.q3_tenths) for r in records} == {(30, 30, 30)}


def test_biased_rater_preserves_ranking(truth_group):
    truth, ids = truth_group
    rng = np.random.default_rng(1)
    model = RaterModel(kind="biased", offset=0.5, scale=1.0, noise_sd=0.0,
                       attention_noise_sd=0.0)
    records = simulate_rater(model, truth, ids, rng)
    true_vals = [truth[sid].true_avqa for sid in ids]
    rated = [r.q1_avqa for r in records]
    # quantization can tie near-equal truths, so allow a whisker below 1.0
    assert srocc(rated, true_vals) > 0.995


def test_zero_noise_faithful_reproduces_quantized_truth(truth_group):
    truth, ids = truth_group
    rng = np.random.default_rng(2)
    model = RaterModel(kind="faithful", noise_sd=0.0, attention_noise_sd=0.0)
    records = simulate_rater(model, truth, ids, rng)
    for r in records:
        t = truth[r.sequence_id]
        assert r.q1_tenths == round(min(5.0, max(1.0, t.true_avqa)) * 10)
        assert r.audio_attention_pct == round(t.true_attention)


def test_faithful_expected_srocc_near_09(truth_group):
    """Monte Carlo: noise_sd = 0.3 over truths with spread ~0.7 -> SROCC ~ 0.9.

    Oracle run (10k trials): mean 0.896, sd 0.044; with 400 trials the
    sample mean lands within [0.88, 0.91] with overwhelming probability.
    """
    rng = np.random.default_rng(3)
    truth = {}
    base = np.clip(rng.normal(3.47, 0.7, 30), 1, 5)
    for i, v in enumerate(base):
        truth[f"t{i}"] = GroundTruthEntry(float(v), float(v), float(v), 50.0)
    ids = list(truth)
    true_vals = [truth[sid].true_avqa for sid in ids]
    model = RaterModel(kind="faithful", noise_sd=0.3)
    vals = []
    for _ in range(400):
        records = simulate_rater(model, truth, ids, rng)
        vals.append(srocc([r.q1_avqa for r in records], true_vals))
    assert 0.86 <= float(np.mean(vals)) <= 0.93


@given(
    kind=st.sampled_from(["faithful", "biased", "random_uniform", "midrange", "constant"]),
    noise=st.floats(0.0, 3.0),
    offset=st.floats(-3.0, 3.0),
    seed=st.integers(0, 2**31),
)
@settings(max_examples=60, deadline=None)
def test_all_models_respect_scale_invariants(kind, noise, offset, seed):
    rng = np.random.default_rng(seed)
    truth = {
        "a": GroundTruthEntry(1.0, 5.0, 3.0, 0.0),
        "b": GroundTruthEntry(4.9, 1.1, 2.2, 100.0),
        "c": GroundTruthEntry(3.0, 3.0, 3.0, 50.0),
    }
    model = RaterModel(kind=kind, noise_sd=noise, offset=offset, value=3.0)
    for rec in simulate_rater(model, truth, list(truth), rng):
        assert 10 <= rec.q1_tenths <= 50
        assert 10 <= rec.q2_tenths <= 50
        assert 10 <= rec.q3_tenths <= 50
        assert 0 <= rec.audio_attention_pct <= 100
        assert not rec.scale_errors()


def test_simulate_rater_deterministic(truth_group):
    truth, ids = truth_group
    model = RaterModel(kind="faithful", noise_sd=0.4)
    a = simulate_rater(model, truth, ids, np.random.default_rng(5))
    b = simulate_rater(model, truth, ids, np.random.default_rng(5))
    assert a == b
