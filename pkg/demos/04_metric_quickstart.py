"""Train a deliberately tiny encoder for a few epochs and compare styles with it.

This runs in about a minute and is only meant to show the API. The full desk
run is `stylex train` (see the README).

    python demos/04_metric_quickstart.py
"""

import numpy as np

from stylex import StyleParams, stylex_distance
from stylex.metric import distance_matrix
from stylex.nn import EncoderConfig, PredictorConfig
from stylex.phantoms import CropConfig, crop_view, eval_view, generate_phantom, make_split, render
from stylex.pipelines import corner_styles
from stylex.trainer import PairStream, TrainConfig, train

crop = CropConfig(crop=64, out=32)
encoder = EncoderConfig(stages=[(8, 1), (16, 1), (32, 1)], embedding_dim=32, projection_hidden=32,
                        input_size=(32, 32), stem_channels=8)
predictor = PredictorConfig(hidden_dim=16, output_dim=32)

split = make_split(120)
raws = {c: generate_phantom(c) for c in split.all_ids}
stream = PairStream(raws.__getitem__, split.train_ids, corner_styles(), crop=crop)
result = train(stream, encoder, predictor, TrainConfig(epochs=40, batch_size=32, base_lr=0.05),
               progress=print)
model = result.model


def view(content, style):
    raw = raws[content]
    return crop_view(render(raw, style), eval_view(content, raw.shape, crop, raw.mask), crop)


ref_content, other = split.test_ids[0], split.test_ids[1]
soft, harsh = StyleParams(w=10, l=0, h=0), StyleParams(w=0, l=10, h=10)
ref = view(ref_content, soft)
print(f"same image:                   {stylex_distance(ref, ref, model):.4f}")
print(f"same style, other content:    {stylex_distance(ref, view(other, soft), model):.4f}")
print(f"other style, same content:    {stylex_distance(ref, view(ref_content, harsh), model):.4f}")

images = [view(c, s) for s in (soft, harsh) for c in split.test_ids[:3]]
print("distance matrix (rows: 3 contents in the soft style, then 3 in the harsh style)")
print(np.array2string(distance_matrix(images, model), precision=3, suppress_small=True))
