"""Patch scoring, top-m selection, and pixel extraction.

The saliency map is divided into non-overlapping p x p patches; each patch
is scored by its summed saliency and the m best patches are kept.  Only
those patches (raw pixels plus their grid coordinates) reach the model, so
selection is where the sequence-length saving happens.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError


@dataclass(frozen=True)
class PatchEntry:
    index: int
    row: int
    col: int
    score: float


@dataclass(frozen=True)
class PatchSelection:
    """Ordered patch choice over a grid_rows x grid_cols score grid.

    Entries are score-descending with ties broken by ascending row-major
    index, unless constructed with raster order (ascending index).
    """

    entries: tuple
    grid_rows: int
    grid_cols: int
    patch_size: int

    @property
    def m(self) -> int:
        return len(self.entries)

    def coords(self) -> np.ndarray:
        return np.array([(e.row, e.col) for e in self.entries], dtype=np.int64)


def _grid_shape(map_shape, patch_size: int):
    h, w = map_shape
    if patch_size < 1:
        raise ParameterError(f"patch_size must be >= 1, got {patch_size}")
    if h % patch_size or w % patch_size:
        raise ShapeError(
            f"map shape {h}x{w} not divisible by patch size {patch_size}"
        )
    return h // patch_size, w // patch_size


def patch_scores(map_values: np.ndarray, patch_size: int) -> np.ndarray:
    """Sum the map over each p x p patch; returns a grid_rows x grid_cols array."""
    map_values = np.asarray(map_values, dtype=np.float64)
    if map_values.ndim != 2:
        raise ShapeError(f"expected a 2D map, got shape {map_values.shape}")
    gr, gc = _grid_shape(map_values.shape, patch_size)
    return map_values.reshape(gr, patch_size, gc, patch_size).sum(axis=(1, 3))


def select_top_m(scores: np.ndarray, m: int, patch_size: int, order: str = "salience") -> PatchSelection:
    """Pick the m highest-scoring patches.

    Ties are broken by ascending row-major index, which makes the
    selection deterministic.  ``order`` controls the order of the returned
    entries: "salience" (score-descending, the default feed order) or
    "raster" (ascending index over the same chosen set).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ShapeError(f"expected a 2D score grid, got shape {scores.shape}")
    gr, gc = scores.shape
    total = gr * gc
    if not 1 <= m <= total:
        raise ParameterError(f"m must be in [1, {total}], got {m}")
    if order not in ("salience", "raster"):
        raise ParameterError(f"order must be 'salience' or 'raster', got {order!r}")
    flat = scores.reshape(-1)
    # Stable sort on descending score: equal scores keep ascending index.
    ranked = np.argsort(-flat, kind="stable")[:m]
    if order == "raster":
        ranked = np.sort(ranked)
    entries = tuple(
        PatchEntry(index=int(i), row=int(i) // gc, col=int(i) % gc, score=float(flat[i]))
        for i in ranked
    )
    return PatchSelection(entries=entries, grid_rows=gr, grid_cols=gc, patch_size=patch_size)


def extract_patches(img: np.ndarray, sel: PatchSelection):
    """Pull the selected patches out of an (H, W, 3) image.

    Returns a list of (vector, (row, col)) pairs in selection order; each
    vector is the patch's pixels flattened row-major with the channel
    index fastest.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected an (H, W, 3) image, got shape {img.shape}")
    p = sel.patch_size
    gr, gc = _grid_shape(img.shape[:2], p)
    out = []
    for e in sel.entries:
        if not (0 <= e.row < gr and 0 <= e.col < gc):
            raise ParameterError(
                f"patch ({e.row}, {e.col}) outside the {gr}x{gc} grid of this image"
            )
        block = img[e.row * p : (e.row + 1) * p, e.col * p : (e.col + 1) * p, :]
        out.append((block.reshape(-1).copy(), (e.row, e.col)))
    return out


def patch_matrix(img: np.ndarray, sel: PatchSelection):
    """extract_patches stacked into arrays: (m, p*p*3) vectors, (m, 2) coords."""
    pairs = extract_patches(img, sel)
    vectors = np.stack([v for v, _ in pairs])
    coords = np.array([c for _, c in pairs], dtype=np.int64)
    return vectors, coords
