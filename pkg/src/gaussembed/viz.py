"""Flat-map visualization: project word means to 2-D and draw labeled circles.

The projection is standard centered PCA (top-2 principal directions of the
selected subset, or optionally of the whole table), which is the rank-2
linear projection with least-squares-optimal reconstruction.  Circle radius
grows linearly with sigma, scaled so the median radius is 5% of the canvas;
the SVG is emitted with deterministic formatting so identical inputs give
byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .corpus import WordIndex
from .training import EmbeddingMatrix

# A circle bigger than this fraction of the canvas cannot fit; when the
# sigma spread is that extreme all radii are scaled down together so the
# radius ratios stay exact.
_MAX_RADIUS_FRACTION = 0.25


@dataclass(frozen=True, eq=False)
class VizSpec:
    """Everything the SVG emitter needs: labels, centers, radii, canvas size."""

    words: tuple[str, ...]
    centers: np.ndarray  # (n, 2) canvas coordinates
    radii: np.ndarray    # (n,) canvas units, all > 0
    extent: float

    def __post_init__(self):
        if np.any(self.radii <= 0):
            raise ValueError("radii must be positive")
        lo = self.centers - self.radii[:, None]
        hi = self.centers + self.radii[:, None]
        if np.any(lo < -1e-9) or np.any(hi > self.extent + 1e-9):
            raise ValueError("circles must lie within the canvas")


def _principal_axes(means: np.ndarray) -> np.ndarray:
    """Top-2 right singular vectors of the centered matrix, sign-fixed."""
    centered = means - means.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    axes = vt[:2].copy()
    # SVD sign is arbitrary; pin it so output is reproducible.
    for row in axes:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    return axes


def pca_project(means) -> np.ndarray:
    """Project mean vectors onto their own top-2 principal directions.

    Centered first, so the output is invariant to translating all means by
    a constant vector.  Needs at least two distinct points in dimension >= 2.
    """
    means = np.asarray(means, dtype=np.float64)
    if means.ndim != 2 or means.shape[0] < 2:
        raise ValueError("need a (n >= 2, dim) matrix of means")
    if means.shape[1] < 2:
        raise ValueError("need dimension >= 2")
    if np.allclose(means, means[0], rtol=0.0, atol=0.0):
        raise ValueError("degenerate input: all points identical")
    centered = means - means.mean(axis=0)
    return centered @ _principal_axes(means).T


def build_viz_spec(
    params: EmbeddingMatrix,
    index: WordIndex,
    words,
    extent: float = 1000.0,
    pca: str = "selected",
) -> VizSpec:
    """Lay out the selected words on a square canvas.

    ``pca="selected"`` fits the projection on the chosen words only (local
    neighborhoods stay legible); ``pca="global"`` fits it on the whole
    table and then projects the selection.  A single word sits at the
    canvas center.
    """
    if pca not in ("selected", "global"):
        raise ValueError("pca must be 'selected' or 'global'")
    words = list(words)
    if not words:
        raise ValueError("no words selected")
    missing = [w for w in words if w not in index.id_of]
    if missing:
        raise KeyError(f"words not in vocabulary: {missing}")
    ids = [index.id_of[w] for w in words]
    sigmas = params.sigmas[ids]

    scale = 0.05 * extent / float(np.median(sigmas))
    radii = sigmas * scale
    max_r = float(radii.max())
    if max_r > _MAX_RADIUS_FRACTION * extent:
        radii = radii * (_MAX_RADIUS_FRACTION * extent / max_r)
        max_r = float(radii.max())

    if len(words) == 1:
        centers = np.array([[extent / 2.0, extent / 2.0]])
        return VizSpec(tuple(words), centers, radii, extent)

    selected = params.means[ids]
    if pca == "global":
        axes = _principal_axes(params.means)
        coords = (selected - params.means.mean(axis=0)) @ axes.T
    else:
        coords = pca_project(selected)

    pad = max_r + 0.02 * extent
    span = extent - 2.0 * pad
    ranges = coords.max(axis=0) - coords.min(axis=0)
    widest = float(ranges.max())
    s = span / widest if widest > 0 else 1.0
    mid = (coords.max(axis=0) + coords.min(axis=0)) / 2.0
    centers = (coords - mid) * s + extent / 2.0
    return VizSpec(tuple(words), centers, radii, extent)


def emit_viz(viz: VizSpec, path) -> None:
    """Write a standalone SVG with one labeled circle per word.

    Floats are printed with shortest round-trip precision, so the same spec
    always produces the same bytes.
    """
    e = repr(float(viz.extent))
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{e}" height="{e}" '
        f'viewBox="0 0 {e} {e}">',
        f'<rect width="{e}" height="{e}" fill="white"/>',
    ]
    for word, center, radius in zip(viz.words, viz.centers, viz.radii):
        cx, cy, r = repr(float(center[0])), repr(float(center[1])), repr(float(radius))
        label = escape(word)
        lines.append(
            f'<circle cx="{cx}" cy="{cy}" r="{r}" fill="#4c72b0" '
            f'fill-opacity="0.35" stroke="#2a4d69"/>'
        )
        lines.append(
            f'<text x="{cx}" y="{cy}" text-anchor="middle" '
            f'dominant-baseline="middle" font-family="sans-serif" '
            f'font-size="14">{label}</text>'
        )
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
