from collections import Counter

import numpy as np
import pytest
from scipy import stats

from stylex.images import RAW_MAX
from stylex.phantoms import (CorpusManifest, CropConfig, PositivePair, crop_view, eval_view, file_sha256,
                             generate_phantom, load_phantom, make_pairs, make_split, phantom_path, plan_pairs,
                             render, sample_view, save_phantom)
from stylex.pipelines import StyleParams, corner_styles


def test_same_seed_bitwise_identical():
    a, b = generate_phantom(42), generate_phantom(42)
    np.testing.assert_array_equal(a.pixels, b.pixels)
    assert a.content_id == "phantom-42"


def test_distinct_seeds_give_distinct_images():
    imgs = np.stack([generate_phantom(s, (64, 64)).pixels for s in range(100)])
    flat = imgs.reshape(100, -1)
    worst = min(np.abs(flat[i] - flat[i + 1:]).mean(axis=1).min() for i in range(99))
    assert worst > 0.01 * RAW_MAX


def test_range_over_many_seeds():
    lo, hi = np.inf, -np.inf
    for s in range(1000):
        px = generate_phantom(s, (64, 64)).pixels
        lo, hi = min(lo, px.min()), max(hi, px.max())
    assert lo >= 0.0 and hi <= RAW_MAX


def test_phantom_has_body_and_background():
    raw = generate_phantom(5)
    assert raw.shape == (128, 128)
    body = raw.mask > 0.5
    assert 0.3 < body.mean() < 0.95
    assert raw.pixels[body].mean() > 3 * raw.pixels[~body].mean()


def test_small_size_rejected():
    with pytest.raises(ValueError):
        generate_phantom(0, (32, 32))


def test_split_sizes_and_disjointness():
    split = make_split(800, 0.7, 0)
    assert len(split.train_ids) == 560 and len(split.test_ids) == 240
    assert not set(split.train_ids) & set(split.test_ids)
    assert make_split(800, 0.7, 0) == split
    assert make_split(800, 0.7, 1).train_ids != split.train_ids


def test_split_overlap_rejected():
    from stylex.phantoms import DatasetSplit

    with pytest.raises(ValueError):
        DatasetSplit([1, 2], [2, 3])


IDS = list(range(20))


def test_same_content_policy():
    plans = plan_pairs(IDS, corner_styles(), "same_content", 500, 0)
    assert all(p.view_a.content_seed == p.view_b.content_seed for p in plans)


def test_different_content_policy():
    plans = plan_pairs(IDS, corner_styles(), "different_content", 1000, 1)
    assert sum(p.view_a.content_seed == p.view_b.content_seed for p in plans) == 0


def test_mixed_policy_style_histogram():
    styles = corner_styles()
    plans = plan_pairs(IDS, styles, "mixed", 10_000, 2)
    counts = Counter(p.style for p in plans)
    freq = np.array([counts[s] for s in styles])
    assert np.all(np.abs(freq - 1250) <= 0.2 * 1250)
    assert stats.chisquare(freq).pvalue > 0.001
    same = np.mean([p.view_a.content_seed == p.view_b.content_seed for p in plans])
    assert 0.45 < same < 0.55


def test_pair_plans_deterministic_and_policy_errors():
    a = plan_pairs(IDS, corner_styles(), "mixed", 50, 9)
    assert a == plan_pairs(IDS, corner_styles(), "mixed", 50, 9)
    with pytest.raises(ValueError):
        plan_pairs([3], corner_styles(), "different_content", 5, 0)
    with pytest.raises(ValueError):
        plan_pairs(IDS, corner_styles(), "other", 5, 0)
    with pytest.raises(ValueError):
        plan_pairs(IDS, [], "mixed", 5, 0)


def test_make_pairs_renders_shared_style():
    split = make_split(20, 0.5, 3)
    pairs = make_pairs(split, corner_styles(), "different_content", 6, 0)
    for pair in pairs:
        assert pair.view_a.style_id == pair.view_b.style_id
        assert pair.view_a.content_id != pair.view_b.content_id
        assert pair.view_a.pixels.shape == (64, 64)
        assert set(pair.view_a.content_id.split("-")[1:]) <= {str(s) for s in split.train_ids}


def test_positive_pair_requires_shared_style():
    raw = generate_phantom(1)
    a = render(raw, StyleParams(0, 0, 0))
    b = render(raw, StyleParams(10, 0, 0))
    with pytest.raises(ValueError):
        PositivePair(a, b, None)


def test_sampled_crops_centre_on_body():
    raw = generate_phantom(8)
    cfg = CropConfig()
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = sample_view(rng, 8, raw.shape, cfg, raw.mask)
        assert raw.mask[v.top + cfg.crop // 2, v.left + cfg.crop // 2] > 0.5
        assert 0 <= v.top <= 128 - cfg.crop and 0 <= v.left <= 128 - cfg.crop


def test_eval_view_deterministic_and_resized():
    raw = generate_phantom(8)
    cfg = CropConfig()
    v = eval_view(8, raw.shape, cfg, raw.mask)
    assert v == eval_view(8, raw.shape, cfg, raw.mask) and not v.flip
    out = crop_view(render(raw, 3), v, cfg)
    assert out.pixels.shape == (64, 64) and out.style_id == "surrogate:seed=3"


def test_phantom_roundtrip_and_manifest(tmp_path):
    raw = generate_phantom(4)
    path = phantom_path(tmp_path, 4)
    digest = save_phantom(path, raw)
    assert digest == file_sha256(path)
    back = load_phantom(path, 4)
    np.testing.assert_array_equal(back.pixels, np.round(raw.pixels))
    np.testing.assert_array_equal(back.mask, raw.mask)
    m = CorpusManifest(0, [128, 128], 0.7, [4], [5], {"4": digest})
    m.save(tmp_path / "manifest.json")
    assert CorpusManifest.load(tmp_path / "manifest.json") == m
    assert m.split.train_ids == [4]
