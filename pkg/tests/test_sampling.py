import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kspace_triage.errors import ConfigError, FormatError, ShapeError
from kspace_triage.sampling import (MaskPrior, SamplingMask, apply_mask, center_mask, count_masks, draw_mask,
                                    enumerate_masks, lines_for_rate, read_mask, sampling_rate, write_mask)

from conftest import complex_normal


def test_mask_invariants():
    m = SamplingMask(4, 8, (5, 1, 3))
    assert m.sampled_lines == (1, 3, 5)
    dense = m.to_dense()
    assert dense.shape == (4, 8)
    assert np.all(dense == dense[0])
    assert list(np.flatnonzero(dense[0])) == [1, 3, 5]
    for bad in [(), (1, 1), (8,), (-1,)]:
        with pytest.raises(ConfigError):
            SamplingMask(4, 8, bad)
    with pytest.raises(ConfigError):
        SamplingMask(4, 8, (1,), axis="rows")


def test_sampling_rate_examples():
    assert sampling_rate(SamplingMask(64, 64, tuple(range(8)))) == 0.125
    assert sampling_rate(SamplingMask.full(5, 7)) == 1.0
    assert sampling_rate(SamplingMask(1, 100, (42,))) == 0.01


def test_lines_for_rate():
    assert lines_for_rate(64, 0.125) == 8
    assert lines_for_rate(64, 0.08) == 5
    assert lines_for_rate(64, 0.05) == 3
    assert lines_for_rate(10, 0.01) == 1
    with pytest.raises(ConfigError):
        lines_for_rate(10, 0)


def test_draw_full_prior_samples_everything():
    prior = MaskPrior(3, 9, 9)
    for seed in range(5):
        assert draw_mask(prior, np.random.default_rng(seed)).sampled_lines == tuple(range(9))


def test_single_line_frequencies_are_uniform():
    rng = np.random.default_rng(0)
    prior = MaskPrior(1, 10, 1)
    counts = Counter(draw_mask(prior, rng).sampled_lines[0] for _ in range(100_000))
    for line in range(10):
        assert 0.1 * 0.95 <= counts[line] / 100_000 <= 0.1 * 1.05


def test_draw_is_seeded():
    prior = MaskPrior(8, 32, 4)
    a = draw_mask(prior, np.random.default_rng(7))
    b = draw_mask(prior, np.random.default_rng(7))
    assert a == b


def test_center_weighted_prior_prefers_center():
    prior = MaskPrior(8, 32, 1, mode="center_weighted", sigma=2.0)
    rng = np.random.default_rng(0)
    lines = [draw_mask(prior, rng).sampled_lines[0] for _ in range(2000)]
    assert abs(np.mean(lines) - 16) < 0.5
    assert np.mean(np.abs(np.array(lines) - 16) <= 4) > 0.9
    with pytest.raises(ConfigError):
        MaskPrior(8, 32, 1, mode="center_weighted")


@given(st.integers(1, 40), st.data())
def test_drawn_rate_is_exact(cols, data):
    n = data.draw(st.integers(1, cols))
    seed = data.draw(st.integers(0, 2 ** 32 - 1))
    m = draw_mask(MaskPrior(2, cols, n), np.random.default_rng(seed))
    assert sampling_rate(m) == n / cols
    assert len(set(m.sampled_lines)) == n


def test_apply_mask_examples(rng):
    x = complex_normal(rng, (3, 4))
    assert np.array_equal(apply_mask(x, SamplingMask.full(3, 4)), x)
    m = SamplingMask(3, 4, (0, 3))
    out = apply_mask(x, m)
    np.testing.assert_array_equal(out, x * m.to_dense())
    assert np.all(out[:, [1, 2]] == 0)
    with pytest.raises(ShapeError):
        apply_mask(x, SamplingMask(4, 3, (0,)))


@given(st.integers(0, 2 ** 32 - 1))
def test_apply_mask_idempotent_and_batched(seed):
    rng = np.random.default_rng(seed)
    m = draw_mask(MaskPrior(5, 6, 2), rng)
    x = complex_normal(rng, (2, 5, 6))
    once = apply_mask(x, m)
    np.testing.assert_array_equal(apply_mask(once, m), once)
    np.testing.assert_array_equal(once[1], apply_mask(x[1], m))


def test_center_mask_examples():
    assert center_mask(8, 2).sampled_lines == (3, 4)
    assert center_mask(8, 8).sampled_lines == tuple(range(8))
    assert center_mask(9, 1).sampled_lines == (4,)
    assert center_mask(64, 5).sampled_lines == (30, 31, 32, 33, 34)
    assert center_mask(64, 5, rows=32).rows == 32


@given(st.integers(1, 30), st.data())
def test_center_mask_is_nearest_set(cols, data):
    n = data.draw(st.integers(1, cols))
    lines = center_mask(cols, n).sampled_lines
    dist = sorted(abs(i - cols // 2) for i in range(cols))
    assert sorted(abs(i - cols // 2) for i in lines) == dist[:n]


def test_enumerate_masks():
    masks = list(enumerate_masks(2, 6, 2))
    assert len(masks) == count_masks(6, 2) == 15
    assert len(set(masks)) == 15


def test_mask_file_round_trip(tmp_path):
    m = SamplingMask(64, 64, (3, 30, 55))
    path = tmp_path / "mask.json"
    write_mask(path, m)
    assert json.loads(path.read_text()) == {"rows": 64, "cols": 64, "axis": "cols", "sampled_lines": [3, 30, 55]}
    assert read_mask(path) == m
    path.write_text("{not json")
    with pytest.raises(FormatError):
        read_mask(path)
    path.write_text('{"rows": 4}')
    with pytest.raises(FormatError):
        read_mask(path)
    with pytest.raises(ConfigError):
        read_mask(tmp_path / "missing.json")
