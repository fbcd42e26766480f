import json
from itertools import combinations
from math import comb

import numpy as np
import pytest
from hypothesis import given, strategies as st

from expertadapt.data import (AnnotatedCase, MultiExpertDataset, SamplingPlan, expert_combinations, load_manifest,
                              restrict, sample_indices, save_dataset, starting_indices)
from expertadapt.errors import DataError, UnknownExpertError, ValidationError


def make_dataset(n_cases=34, experts=range(1, 8), size=8, seed=0):
    rng = np.random.default_rng(seed)
    cases = []
    for k in range(1, n_cases + 1):
        image = np.round(rng.random((size, size)) * 65535) / 65535
        masks = {r: (rng.random((size, size)) > 0.5).astype(np.uint8) for r in experts}
        cases.append(AnnotatedCase(k, image, masks))
    return MultiExpertDataset(tuple(cases))


# ---------------------------------------------------------------- sampling


def test_sample_indices_first_way():
    assert sample_indices(1, 10, 34) == list(range(1, 11))


def test_sample_indices_wraps_past_cardinality():
    assert sample_indices(28, 10, 34) == [28, 29, 30, 31, 32, 33, 34, 1, 2, 3]


def test_sample_indices_single():
    assert sample_indices(4, 1, 34) == [4]
    assert SamplingPlan(4, 1, 34).indices() == [4]


def test_sample_indices_count_too_large():
    with pytest.raises(ValueError):
        sample_indices(1, 35, 34)


def test_starting_indices():
    assert starting_indices(34, 10) == [1, 4, 7, 10, 13, 16, 19, 22, 25, 28]
    assert starting_indices(10, 1) == [1]
    assert starting_indices(12, 4) == [1, 4, 7, 10]
    with pytest.raises(ValueError):
        starting_indices(3, 4)


@given(st.integers(1, 60).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n), st.integers(1, n))))
def test_wraparound_properties(args):
    card, start, count = args
    idx = sample_indices(start, count, card)
    assert len(idx) == count
    assert len(set(idx)) == count
    assert all(1 <= i <= card for i in idx)
    assert idx[0] == start


def test_nesting_exhaustive():
    for start in range(1, 35):
        full = sample_indices(start, 34, 34)
        for n in range(1, 35):
            assert sample_indices(start, n, 34) == full[:n]


def _covered(count):
    covered = set()
    for s in starting_indices(34, 10):
        covered.update(sample_indices(s, count, 34))
    return covered


def test_coverage_of_ten_ways():
    # the last start is 28, so 32..34 are reached only once count >= 7
    for count in range(7, 35):
        assert _covered(count) == set(range(1, 35))
    for count in range(3, 7):
        assert _covered(count) == set(range(1, 28 + count))


# ------------------------------------------------------------ combinations


@pytest.mark.parametrize("k,expected", [(4, 5), (5, 1), (2, 10), (3, 10), (1, 5)])
def test_expert_combination_counts(k, expected):
    combos = expert_combinations({1, 2, 3, 4, 5}, k)
    assert len(combos) == expected == comb(5, k)
    assert combos == list(combinations(range(1, 6), k))  # brute-force enumeration
    assert len(set(combos)) == len(combos)


def test_expert_combinations_full_set():
    assert expert_combinations({5, 3, 1, 2, 4}, 5) == [(1, 2, 3, 4, 5)]


def test_expert_combinations_bad_k():
    with pytest.raises(ValueError):
        expert_combinations({1, 2}, 3)
    with pytest.raises(ValueError):
        expert_combinations({1, 2}, 0)


# ------------------------------------------------------------------ restrict


def test_restrict_identity_indices():
    ds = make_dataset()
    sub = restrict(ds, (1, 2, 3), range(1, 35))
    assert sub.n_cases == 34 and sub.roster == {1, 2, 3}
    assert all(set(c.masks) == {1, 2, 3} for c in sub)


def test_restrict_new_expert_subsample():
    ds = make_dataset()
    sub = restrict(ds, (6,), sample_indices(1, 10, 34))
    assert sub.case_indices == tuple(range(1, 11))
    assert sub.roster == {6}


def test_restrict_unknown_expert():
    with pytest.raises(UnknownExpertError):
        restrict(make_dataset(), (9,), [1])


def test_restrict_unknown_index():
    with pytest.raises(DataError):
        restrict(make_dataset(), (1,), [99])


def test_restriction_is_immutable():
    sub = restrict(make_dataset(), (1,), [1, 2])
    with pytest.raises(ValueError):
        sub.cases[0].image[0, 0] = 0.5
    with pytest.raises(TypeError):
        sub.cases[0].masks[2] = sub.cases[0].masks[1]


def test_at_positions_keeps_wraparound_cases():
    ds = make_dataset()
    sub = ds.at_positions(sample_indices(28, 10, 34))
    assert set(sub.case_indices) == {28, 29, 30, 31, 32, 33, 34, 1, 2, 3}


# --------------------------------------------------------------- validation


def test_mask_shape_mismatch():
    with pytest.raises(ValidationError):
        AnnotatedCase(1, np.zeros((8, 8)), {1: np.zeros((8, 9), dtype=np.uint8)})


def test_non_binary_mask():
    with pytest.raises(ValidationError):
        AnnotatedCase(1, np.zeros((8, 8)), {1: np.full((8, 8), 2, dtype=np.uint8)})


def test_image_range_checked():
    with pytest.raises(ValidationError):
        AnnotatedCase(1, np.full((8, 8), 1.5), {})
    with pytest.raises(ValidationError):
        AnnotatedCase(1, np.zeros((4, 4)), {})


def test_roster_must_be_complete():
    a = AnnotatedCase(1, np.zeros((8, 8)), {1: np.zeros((8, 8)), 2: np.zeros((8, 8))})
    b = AnnotatedCase(2, np.zeros((8, 8)), {1: np.zeros((8, 8))})
    with pytest.raises(ValidationError):
        MultiExpertDataset((a, b), frozenset({1, 2}))


# ---------------------------------------------------------------------- I/O


def test_round_trip_is_bit_exact(tmp_path):
    ds = make_dataset(n_cases=5, size=12)
    save_dataset(ds, tmp_path)
    back = load_manifest(tmp_path)
    assert back.case_indices == ds.case_indices
    assert back.roster == ds.roster
    for a, b in zip(ds, back):
        np.testing.assert_array_equal(a.image, b.image)
        for r in ds.roster:
            np.testing.assert_array_equal(a.masks[r], b.masks[r])


def test_load_34_cases_7_experts(tmp_path):
    save_dataset(make_dataset(n_cases=34), tmp_path)
    ds = load_manifest(tmp_path)
    assert ds.n_cases == 34 and ds.roster == set(range(1, 8))


def test_load_empty_directory(tmp_path):
    with pytest.raises(DataError, match="no cases found"):
        load_manifest(tmp_path)


def test_load_missing_mask_names_case_and_expert(tmp_path):
    save_dataset(make_dataset(n_cases=4), tmp_path)
    (tmp_path / "case_3" / "expert_5.png").unlink()
    with pytest.raises(DataError, match=r"case 3, expert 5"):
        load_manifest(tmp_path)


def test_load_shape_mismatch(tmp_path):
    from PIL import Image

    save_dataset(make_dataset(n_cases=2), tmp_path)
    Image.fromarray(np.zeros((9, 9), dtype=np.uint8)).save(tmp_path / "case_2" / "expert_1.png")
    with pytest.raises(ValidationError):
        load_manifest(tmp_path)


def test_load_8bit_image(tmp_path):
    from PIL import Image

    save_dataset(make_dataset(n_cases=1), tmp_path)
    Image.fromarray(np.full((8, 8), 255, dtype=np.uint8)).save(tmp_path / "case_1" / "image.png")
    assert load_manifest(tmp_path).case(1).image.max() == 1.0


def test_manifest_spacing_and_splits(tmp_path):
    ds = make_dataset(n_cases=6)
    ds = MultiExpertDataset(ds.cases, ds.roster, (0.5, 2.0), {"train": (1, 2, 3, 4), "test": (5, 6)})
    save_dataset(ds, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["spacing"] == [0.5, 2.0]
    back = load_manifest(tmp_path)
    assert back.spacing == (0.5, 2.0)
    assert back.split("test").case_indices == (5, 6)
