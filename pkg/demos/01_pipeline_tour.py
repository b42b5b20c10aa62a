"""Walk through the synthetic data and the two styling pipelines.

Generates one phantom, decomposes it into a Laplacian pyramid, shows that
unit gains reconstruct it exactly, then renders the eight LAP corner styles
and a handful of surrogate styles into a contact sheet.

    python demos/01_pipeline_tour.py [out_dir]
"""

import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from stylex.phantoms import generate_phantom
from stylex.pipelines import (StyleParams, apply_lap, apply_surrogate, build_pyramid, corner_styles, lap_prewindow,
                              reconstruct)

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

raw = generate_phantom(42)
print(f"phantom 42: {raw.shape}, intensities {raw.pixels.min():.0f}..{raw.pixels.max():.0f}")

pyr = build_pyramid(raw.pixels, 4)
for k, band in enumerate(pyr.bands):
    print(f"  band {k}: {band.shape}, std {band.std():8.2f}")
print(f"  residual: {pyr.residual.shape}")
err = np.abs(reconstruct(pyr) - raw.pixels).max() / np.ptp(raw.pixels)
print(f"unit-gain reconstruction error: {err:.2e} of the dynamic range")

# h=0 removes the two finest bands before windowing
flat = build_pyramid(lap_prewindow(raw, StyleParams(w=5, l=5, h=0)), 4)
share = (flat.bands[0] ** 2).sum() / (pyr.bands[0] ** 2).sum()
print(f"finest-band energy left with h=0: {share:.1e} of the original")

styled = [(s.style_id.removeprefix("lap:"), apply_lap(raw, s).pixels) for s in corner_styles()]
styled += [(f"surrogate {seed}", apply_surrogate(raw, seed).pixels) for seed in (0, 7, 28, 31)]

fig, axes = plt.subplots(3, 4, figsize=(10, 8))
for ax, (title, pixels) in zip(axes.flat, styled):
    ax.imshow(pixels, cmap="gray", vmin=0, vmax=1)
    ax.set_title(title, fontsize=8)
    ax.axis("off")
fig.tight_layout()
fig.savefig(out / "styles.png", dpi=100)
print(f"wrote {out / 'styles.png'}")
