import csv
import json
import math

import numpy as np
import pytest

from stylex import autodiff as ad
from stylex import trainer as tr
from stylex.autodiff import Tensor
from stylex.checkpoint import CheckpointError, decode_tensors, encode_tensors, load_tensors, save_tensors
from stylex.nn import SGD, EncoderConfig, PredictorConfig, cosine_lr
from stylex.phantoms import CropConfig, crop_view, eval_view, generate_phantom, make_split, render
from stylex.pipelines import StyleParams, corner_styles
from stylex.trainer import (NumericAbort, PairStream, StyleModel, TrainConfig, collapse_std, embed_corpus, encode,
                            simsiam_loss, train)

TINY = EncoderConfig(stages=[(8, 1), (16, 1)], embedding_dim=16, projection_hidden=16, input_size=(32, 32),
                     stem_channels=8)
TINY_PRED = PredictorConfig(hidden_dim=8, output_dim=16)
CROP = CropConfig(crop=64, out=32)


@pytest.fixture(scope="module")
def model():
    return StyleModel.create(TINY, TINY_PRED, seed=3)


@pytest.fixture(scope="module")
def images():
    out = []
    for i, style in enumerate(corner_styles() * 7):
        raw = generate_phantom(100 + i % 9)
        out.append(crop_view(render(raw, style), eval_view(raw.content_seed, raw.shape, CROP, raw.mask), CROP))
    return out[:50]


# loss -----------------------------------------------------------------------

def _t(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad, dtype=np.float64)


def test_perfect_prediction_gives_minus_one():
    rng = np.random.default_rng(0)
    z1, z2 = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
    loss = simsiam_loss(_t(z1), _t(z2), _t(z2), _t(z1))
    assert loss.item() == pytest.approx(-1.0, abs=1e-12)


def test_orthogonal_prediction_gives_zero():
    z = np.array([[1.0, 0.0], [0.0, 2.0]])
    p = np.array([[0.0, 3.0], [1.0, 0.0]])
    assert simsiam_loss(_t(z), _t(z), _t(p), _t(p)).item() == pytest.approx(0.0, abs=1e-12)


def test_target_branch_receives_no_gradient():
    rng = np.random.default_rng(1)
    z1, z2, p1, p2 = (_t(rng.normal(size=(5, 8))) for _ in range(4))
    ad.backward(simsiam_loss(z1, z2, p1, p2))
    for z in (z1, z2):
        assert z.grad is None or not np.any(z.grad)
    assert np.any(p1.grad) and np.any(p2.grad)


def test_gradient_reaches_encoder_through_predictor(model):
    x = _t(np.random.default_rng(2).normal(size=(4, 16)))
    model.predictor.train()
    ad.backward(simsiam_loss(x, x, model.predictor(x), model.predictor(x)))
    assert np.any(x.grad)


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        simsiam_loss(_t(np.ones((2, 3))), _t(np.ones((2, 3))), _t(np.ones((2, 4))), _t(np.ones((2, 3))))


# encoding -------------------------------------------------------------------

def test_encode_deterministic_and_sized(model, images):
    a, b = encode(images[0], model), encode(images[0], model)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (16,)


def test_embed_corpus_permutation(model, images):
    perm = np.random.default_rng(3).permutation(len(images))
    full = embed_corpus(images, model)
    np.testing.assert_allclose(embed_corpus([images[i] for i in perm], model), full[perm], atol=1e-6)


def test_batched_matches_single(model, images):
    batched = embed_corpus(images, model, batch_size=50)
    single = np.stack([encode(im, model) for im in images])
    assert np.abs(batched - single).max() < 1e-5


def test_embed_empty(model):
    assert embed_corpus([], model).shape == (0, 16)


def test_input_size_check(model):
    raw = generate_phantom(1)
    with pytest.raises(ValueError):
        encode(render(raw, StyleParams()), model)


def test_collapse_statistic():
    assert collapse_std(np.ones((10, 8))) < 1e-12
    z = np.random.default_rng(4).normal(size=(4000, 64))
    assert collapse_std(z) == pytest.approx(1 / math.sqrt(64), rel=0.05)


def test_to_batch_normalization():
    raw = generate_phantom(1)
    img = crop_view(render(raw, StyleParams()), eval_view(1, raw.shape, CROP, raw.mask), CROP)
    x = tr.to_batch([img, img])
    assert x.shape == (2, 1, 32, 32)
    np.testing.assert_allclose(x.data[0, 0], (img.pixels - 0.5) / 0.25, atol=1e-6)


# optimizer ------------------------------------------------------------------

def test_sgd_momentum_and_weight_decay():
    p = _t([1.0])
    opt = SGD([p], lr=0.1, momentum=0.9, weight_decay=0.5)
    p.grad = np.array([2.0])
    opt.step()
    assert p.data[0] == pytest.approx(1.0 - 0.1 * 2.5)
    p.grad = np.array([2.0])
    opt.step()
    v = 0.9 * 2.5 + (2.0 + 0.5 * 0.75)
    assert p.data[0] == pytest.approx(0.75 - 0.1 * v)


def test_cosine_schedule():
    assert cosine_lr(0.1, 0, 100) == 0.1
    assert cosine_lr(0.1, 50, 100) == pytest.approx(0.05)
    assert cosine_lr(0.1, 100, 100) == pytest.approx(0.0)


def test_default_lr_scales_with_batch():
    assert TrainConfig(batch_size=256).lr == pytest.approx(0.05)
    assert TrainConfig(batch_size=32, base_lr=0.1).lr == 0.1
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)


def test_predictor_bottleneck_enforced():
    with pytest.raises(ValueError):
        PredictorConfig(hidden_dim=128, output_dim=128)
    with pytest.raises(ValueError):
        StyleModel.create(TINY, PredictorConfig(hidden_dim=4, output_dim=8))


def test_paper_scale_configs():
    enc = EncoderConfig.paper_scale()
    assert enc.embedding_dim == 2048 and enc.input_size == (400, 400)
    assert TrainConfig.paper_scale().batch_size == 200


# checkpoints ----------------------------------------------------------------

def test_tensor_codec_roundtrip():
    rng = np.random.default_rng(5)
    tensors = {"a": rng.normal(size=(3, 4)).astype(np.float32), "b.c": np.arange(5, dtype=np.float32),
               "scalar": np.array(2.5, dtype=np.float32)}
    back = decode_tensors(encode_tensors(tensors))
    assert list(back) == list(tensors)
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])


def test_codec_errors():
    payload = encode_tensors({"a": np.ones(3, dtype=np.float32)})
    with pytest.raises(CheckpointError, match="magic"):
        decode_tensors(b"NOPE" + payload[4:])
    with pytest.raises(CheckpointError):
        decode_tensors(payload[:4] + (99).to_bytes(4, "little") + payload[8:])
    with pytest.raises(CheckpointError):
        decode_tensors(payload[:-2])


def test_save_load_with_sidecar(tmp_path):
    path = save_tensors(tmp_path / "x.styx", {"w": np.ones((2, 2), dtype=np.float32)}, {"epoch": 3})
    tensors, meta = load_tensors(path)
    assert meta["epoch"] == 3 and tensors["w"].shape == (2, 2)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["x.json", "x.styx"]


def test_model_roundtrip(tmp_path, model, images):
    path = model.save(tmp_path / "m.styx", note="hi")
    back = StyleModel.load(path)
    assert back.metadata["note"] == "hi"
    np.testing.assert_array_equal(embed_corpus(images[:5], back), embed_corpus(images[:5], model))


# training -------------------------------------------------------------------

@pytest.fixture(scope="module")
def stream():
    split = make_split(12, 0.5, 0)
    cache = {}

    def lookup(seed):
        if seed not in cache:
            cache[seed] = generate_phantom(seed)
        return cache[seed]

    return PairStream(lookup, split.train_ids, corner_styles(), crop=CROP, seed=0)


def test_training_writes_metrics_and_checkpoints(tmp_path, stream):
    cfg = TrainConfig(batch_size=4, epochs=2, pairs_per_epoch=8, probe_size=8)
    result = train(stream, TINY, TINY_PRED, cfg, out_dir=tmp_path)
    rows = list(csv.DictReader(open(result.metrics_path)))
    assert list(rows[0]) == list(tr.METRIC_COLUMNS)
    assert len(rows) == 4 and all(math.isfinite(float(r["loss"])) for r in rows)
    assert [r["collapse_std"] != "" for r in rows] == [False, True, False, True]
    assert float(rows[0]["lr"]) == pytest.approx(cfg.lr)
    names = sorted(p.name for p in (tmp_path / "checkpoints").glob("*.styx"))
    assert names == ["epoch_001.styx", "epoch_002.styx", "final.styx"]
    assert len(result.epoch_loss) == 2 and -1.0 <= result.epoch_loss[-1] <= 1.0
    meta = json.loads((tmp_path / "checkpoints" / "final.json").read_text())
    assert meta["epoch"] == 2 and len(meta["styles"]) == 8


def test_training_is_reproducible(stream):
    cfg = TrainConfig(batch_size=4, epochs=1, pairs_per_epoch=8, probe_size=4)
    a = train(stream, TINY, TINY_PRED, cfg)
    b = train(stream, TINY, TINY_PRED, cfg)
    assert a.epoch_loss == b.epoch_loss


def test_zero_epochs_gives_baseline(tmp_path, stream):
    result = train(stream, TINY, TINY_PRED, TrainConfig(epochs=0, batch_size=4), out_dir=tmp_path)
    assert result.checkpoint.exists() and result.epoch_loss == []
    fresh = StyleModel.create(TINY, TINY_PRED, seed=0)
    np.testing.assert_array_equal(StyleModel.load(result.checkpoint).state()["encoder.stem.weight"],
                                  fresh.state()["encoder.stem.weight"])


def test_nan_loss_aborts_with_manifest(tmp_path, stream, monkeypatch):
    monkeypatch.setattr(tr, "_train_step", lambda *a, **k: float("nan"))
    with pytest.raises(NumericAbort) as info:
        train(stream, TINY, TINY_PRED, TrainConfig(batch_size=4, epochs=1, pairs_per_epoch=8, probe_size=4),
              out_dir=tmp_path)
    dumped = list(tmp_path.glob("nan_batch_*.json"))
    assert len(dumped) == 1
    plans = json.loads(dumped[0].read_text())
    assert len(plans) == 4 and {"style_id", "view_a", "view_b"} <= set(plans[0])
    assert info.value.manifest_path == dumped[0]


def test_pair_stream_epochs_differ_but_repeat(stream):
    assert stream.epoch_plans(0, 8) == stream.epoch_plans(0, 8)
    assert stream.epoch_plans(0, 8) != stream.epoch_plans(1, 8)
    a, b = stream.render(stream.epoch_plans(0, 4))
    assert all(x.style_id == y.style_id and x.content_id != y.content_id for x, y in zip(a, b))
