import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clientprint.features import (
    Scaler, SchemaError, apply_scaler, check_feature_vector, extract_features, fit_scaler,
)
from conftest import att, record

IDEAL = 10_000_000


def test_empty_block():
    v = extract_features(record(), IDEAL)
    assert v.tolist() == [0, 0, 1, 0, 0, 0, 0]


def test_full_block_distinct():
    atts = [att(99 - (i % 30), index=i, data=i) for i in range(128)]
    v = extract_features(record(atts), IDEAL)
    assert v[0] == 1.0
    assert v[1] == 0.0


def _subset_oracle(atts):
    # independent restatement: explicit per-bit union over earlier same-data entries
    redundant = 0
    for i, a in enumerate(atts):
        earlier = [b for b in atts[:i]
                   if (b.att_slot, b.committee_index, b.data_root) == (a.att_slot, a.committee_index, a.data_root)]
        if not earlier:
            continue
        union = set()
        for b in earlier:
            union |= {j for j, ch in enumerate(b.aggregation_bits) if ch == "1"}
        mine = {j for j, ch in enumerate(a.aggregation_bits) if ch == "1"}
        if mine <= union:
            redundant += 1
    return redundant


def test_redundant_quarter():
    atts = [att(98, 1, "1110", data=1), att(98, 2, "0011", data=2),
            att(98, 1, "0110", data=1), att(97, 3, "1000", data=3)]
    assert _subset_oracle(atts) == 1
    v = extract_features(record(atts), IDEAL)
    assert v[1] == 0.25


def test_redundancy_uses_union_of_earlier():
    atts = [att(98, 1, "1100", data=1), att(98, 1, "0011", data=1), att(98, 1, "1010", data=1)]
    assert _subset_oracle(atts) == 1
    assert extract_features(record(atts), IDEAL)[1] == pytest.approx(1 / 3)


def test_scalar_features():
    atts = [att(96, data=1, bits="1000"), att(98, data=2, bits="1100"), att(97, data=3, bits="0100")]
    r = record(atts, slot=100, att_reward=5_000_000, sync_reward=1000, sync_bits=256)
    fill, red, ordered, reward, delay, sync, unagg = extract_features(r, IDEAL)
    assert fill == 3 / 128
    assert ordered == 0.5          # 96<98 ascent, 98>=97 ordered
    assert reward == 0.5
    assert delay == pytest.approx((4 + 2 + 3) / 3 / 32)
    assert sync == 0.5
    assert unagg == pytest.approx(2 / 3)


def test_reward_and_delay_saturate():
    r = record([att(0, data=1)], slot=100, att_reward=5 * IDEAL)
    v = extract_features(r, IDEAL)
    assert v[3] == 2.0 and v[4] == 1.0


@pytest.mark.parametrize("bad, field", [
    (record(att_reward=10, total=5), "total_reward"),
    (record([att(101)], slot=100), "attestations[0].att_slot"),
    (record(sync_bits=513), "sync_bits_set"),
    (record([att(99, bits="")]), "attestations[0].aggregation_bits"),
    (record([att(99)] * 129), "attestations"),
])
def test_schema_errors_name_field(bad, field):
    with pytest.raises(SchemaError) as e:
        extract_features(bad, IDEAL)
    assert e.value.field == field


def test_ideal_reward_positive():
    with pytest.raises(ValueError):
        extract_features(record(), 0)


# ---- properties

attestations = st.lists(
    st.builds(att, st.integers(60, 100), st.integers(0, 3),
              st.text("01", min_size=4, max_size=4), st.integers(0, 4)),
    max_size=40)


@given(attestations, st.integers(0, 512), st.integers(0, 3 * IDEAL))
def test_pure_and_in_range(atts, sync_bits, reward):
    r = record(atts, att_reward=reward, sync_bits=sync_bits)
    a, b = extract_features(r, IDEAL), extract_features(r, IDEAL)
    assert a.tobytes() == b.tobytes()
    check_feature_vector(a)


@given(attestations.filter(len), st.data())
def test_duplicate_never_decreases_redundancy(atts, data):
    dup = data.draw(st.sampled_from(atts))
    before = extract_features(record(atts), IDEAL)[1]
    after = extract_features(record(atts + [dup]), IDEAL)[1]
    assert after >= before


@given(attestations, st.randoms(use_true_random=False))
def test_permutation_changes_only_order_features(atts, rnd):
    shuffled = list(atts)
    rnd.shuffle(shuffled)
    a = extract_features(record(atts), IDEAL)
    b = extract_features(record(shuffled), IDEAL)
    keep = [0, 3, 5, 6]
    assert np.array_equal(a[keep], b[keep])
    assert a[4] == pytest.approx(b[4], abs=1e-15)


@settings(max_examples=50)
@given(attestations)
def test_redundancy_matches_oracle(atts):
    expected = _subset_oracle(atts) / max(1, len(atts))
    assert extract_features(record(atts), IDEAL)[1] == expected


# ---- scaler

def test_scaler_constant_feature():
    x = np.tile([0.1, 0.3, 0.7, 1.3, 0.0, 0.9, 0.2], (50, 1))
    s = fit_scaler(x)
    assert np.all(s.stds == 1e-12)
    assert np.all(s.transform(x) == 0)


def test_scaler_two_points():
    x = np.zeros((2, 7))
    x[1, 0] = 2.0
    s = fit_scaler(x)
    assert s.means[0] == 1.0 and s.stds[0] == 1.0


def test_scaler_centres_data(rng):
    x = rng.random((1000, 7)) * [1, 1, 1, 2, 1, 1, 1]
    z = fit_scaler(x).transform(x)
    assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(z.std(axis=0) - 1) < 1e-9)


def test_scaler_identity_and_inverse(rng):
    v = rng.random(7)
    ident = Scaler(np.zeros(7), np.ones(7))
    assert np.array_equal(apply_scaler(ident, v), v)
    s = fit_scaler(rng.random((20, 7)))
    assert np.all(apply_scaler(s, s.means) == 0)
    back = apply_scaler(s, v) * s.stds + s.means
    assert np.max(np.abs(back - v)) < 1e-12


def test_scaler_errors():
    with pytest.raises(ValueError):
        fit_scaler(np.zeros((0, 7)))
    with pytest.raises(ValueError):
        apply_scaler(Scaler(np.zeros(7), np.ones(7)), np.zeros(6))
