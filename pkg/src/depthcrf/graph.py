"""From rasters to a superpixel graph with appearance features.

Segmentation comes in two modes.  ``grid`` tiles the raster into near-equal
rectangular blocks and is fully deterministic, which makes downstream tests
exact.  ``slic`` runs a simplified local k-means in a 5-D color+position
space: seeds on a regular grid, ten assignment/update sweeps, distance

    d^2 = |rgb_p - rgb_c|^2 + (m / s)^2 |xy_p - xy_c|^2

with cell pitch s = sqrt(H W / target) and compactness m.  Afterwards every
superpixel is reduced to its largest 4-connected component and stray pieces
are merged into an adjacent surviving superpixel, so labels are connected;
beyond that no connectivity enforcement happens.  Label ids are compacted to
0..n-1 and both modes are deterministic functions of their inputs.

Per superpixel the feature extractor computes mean RGB, an L1-normalized
color histogram (10 bins x 3 channels), an L1-normalized 256-bin local
binary pattern histogram over luminance (8 neighbors, radius 1, edge rows
and columns replicated), a square patch around the centroid (edge-replicated
at borders, area-averaged down to a fixed resolution) and the log of the
mean ground-truth depth.  Pairwise similarities between adjacent superpixels
are exp(-gamma_k * ||f_p - f_q||_2) per feature channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.ndimage

LBP_BINS = 256
COLOR_BINS = 10
LUMA = np.array([0.299, 0.587, 0.114])

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass
class SceneSample:
    """One scene: image in [0, 1], positive depth in meters, optional labeling."""

    image: np.ndarray
    depth: np.ndarray | None = None
    labels: np.ndarray | None = None
    centroids: np.ndarray | None = None

    def __post_init__(self):
        img = np.asarray(self.image, dtype=float)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError("image must have shape (H, W, 3)")
        if np.any(img < 0.0) or np.any(img > 1.0) or not np.all(np.isfinite(img)):
            raise ValueError("image values must lie in [0, 1]")
        self.image = img
        if self.depth is not None:
            depth = np.asarray(self.depth, dtype=float)
            if depth.shape != img.shape[:2]:
                raise ValueError("depth raster must match the image size")
            if not np.all(np.isfinite(depth)) or np.any(depth <= 0.0):
                raise ValueError("depth values must be finite and positive")
            self.depth = depth
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != img.shape[:2]:
                raise ValueError("label raster must match the image size")
            ids = np.unique(labels)
            if not np.array_equal(ids, np.arange(ids.size)):
                raise ValueError("labels must cover 0..n-1 with no gaps")
            self.labels = labels.astype(np.intp)

    @property
    def shape(self):
        return self.image.shape[:2]


@dataclass(frozen=True)
class GraphConfig:
    """Everything needed to turn a scene into a CRF-ready graph."""

    target_superpixels: int = 150
    compactness: float = 0.2
    seg_mode: str = "slic"
    box_size: int = 24
    patch_dim: int = 8
    gammas: tuple[float, float, float] = (2.0, 2.0, 2.0)
    use_centroid_depth: bool = False


@dataclass
class SuperpixelFeatures:
    """Per-superpixel descriptors, stacked over the n superpixels of a scene."""

    mean_color: np.ndarray
    color_hist: np.ndarray
    lbp_hist: np.ndarray
    patch: np.ndarray
    gt_logdepth: np.ndarray | None


@dataclass
class GraphData:
    labels: np.ndarray
    centroids: np.ndarray
    features: SuperpixelFeatures
    edges: np.ndarray
    similarities: np.ndarray


def _grid_counts(height, width, target_n):
    pitch = np.sqrt(height * width / target_n)
    rows = max(1, round(height / pitch))
    cols = max(1, round(width / pitch))
    return rows, cols


def _grid_labels(height, width, target_n):
    rows, cols = _grid_counts(height, width, target_n)
    row_ids = np.minimum(np.arange(height) * rows // height, rows - 1)
    col_ids = np.minimum(np.arange(width) * cols // width, cols - 1)
    return row_ids[:, None] * cols + col_ids[None, :]


def _centroids(labels, count):
    rows, cols = np.indices(labels.shape)
    sums_r = np.bincount(labels.ravel(), weights=rows.ravel(), minlength=count)
    sums_c = np.bincount(labels.ravel(), weights=cols.ravel(), minlength=count)
    sizes = np.maximum(np.bincount(labels.ravel(), minlength=count), 1)
    return np.stack([sums_r / sizes, sums_c / sizes], axis=1)


def _compact(labels):
    ids, compacted = np.unique(labels, return_inverse=True)
    return compacted.reshape(labels.shape), ids.size


def _enforce_connectivity(labels, count):
    """Keep each label's largest component; merge strays into neighbors."""
    height, width = labels.shape
    final = np.full((height, width), -1, dtype=np.intp)
    orphans = []
    for i in range(count):
        comps, num = scipy.ndimage.label(labels == i, structure=FOUR_CONNECTED)
        if num == 0:
            continue
        sizes = np.bincount(comps.ravel())[1:]
        main = int(np.argmax(sizes)) + 1
        final[comps == main] = i
        for c in range(1, num + 1):
            if c != main:
                orphans.append(comps == c)
    while orphans:
        remaining = []
        for mask in orphans:
            grown = scipy.ndimage.binary_dilation(mask, structure=FOUR_CONNECTED)
            neighbor_ids = final[grown & ~mask]
            neighbor_ids = neighbor_ids[neighbor_ids >= 0]
            if neighbor_ids.size == 0:
                remaining.append(mask)
                continue
            final[mask] = np.bincount(neighbor_ids).argmax()
        if len(remaining) == len(orphans):
            raise RuntimeError("orphan components have no assigned neighbor")
        orphans = remaining
    return _compact(final)


def segment(image, target_n, compactness=0.2, mode="slic", iters=10):
    """Partition an image into superpixels; returns (labels, centroids)."""
    image = np.asarray(image, dtype=float)
    height, width = image.shape[:2]
    if not 1 <= target_n <= height * width:
        raise ValueError("target superpixel count must be in [1, pixel count]")
    if mode == "grid":
        labels = _grid_labels(height, width, target_n)
        count = labels.max() + 1
        return labels, _centroids(labels, count)
    if mode != "slic":
        raise ValueError("mode must be 'grid' or 'slic'")

    pitch = np.sqrt(height * width / target_n)
    seed_labels = _grid_labels(height, width, target_n)
    count = seed_labels.max() + 1
    centers = _centroids(seed_labels, count)
    colors = image[
        np.clip(np.rint(centers[:, 0]).astype(int), 0, height - 1),
        np.clip(np.rint(centers[:, 1]).astype(int), 0, width - 1),
    ]
    rows, cols = np.indices((height, width))
    spatial_scale = (compactness / pitch) ** 2
    reach = int(np.ceil(2 * pitch))
    labels = seed_labels.copy()
    for _ in range(iters):
        best = np.full((height, width), np.inf)
        labels = np.full((height, width), -1, dtype=np.intp)
        for i in range(count):
            cr, cc = centers[i]
            r0, r1 = max(0, int(cr) - reach), min(height, int(cr) + reach + 1)
            c0, c1 = max(0, int(cc) - reach), min(width, int(cc) + reach + 1)
            window = image[r0:r1, c0:c1]
            d_color = ((window - colors[i]) ** 2).sum(axis=2)
            d_space = (rows[r0:r1, c0:c1] - cr) ** 2 + (cols[r0:r1, c0:c1] - cc) ** 2
            dist = d_color + spatial_scale * d_space
            closer = dist < best[r0:r1, c0:c1]
            best[r0:r1, c0:c1][closer] = dist[closer]
            labels[r0:r1, c0:c1][closer] = i
        # a drifted center can leave a pixel outside every window
        uncovered = labels < 0
        if np.any(uncovered):
            labels[uncovered] = seed_labels[uncovered]
        flat = labels.ravel()
        sizes = np.bincount(flat, minlength=count)
        occupied = sizes > 0
        centers_new = _centroids(labels, count)
        centers[occupied] = centers_new[occupied]
        for ch in range(3):
            acc = np.bincount(flat, weights=image[..., ch].ravel(), minlength=count)
            colors[occupied, ch] = acc[occupied] / sizes[occupied]
    labels, count = _enforce_connectivity(labels, count)
    return labels, _centroids(labels, count)


def adjacency(labels) -> np.ndarray:
    """Edges between 4-connected superpixels, as a sorted (E, 2) array."""
    labels = np.asarray(labels)
    pairs = [
        np.stack([labels[:-1, :].ravel(), labels[1:, :].ravel()], axis=1),
        np.stack([labels[:, :-1].ravel(), labels[:, 1:].ravel()], axis=1),
    ]
    stacked = np.concatenate(pairs)
    stacked = stacked[stacked[:, 0] != stacked[:, 1]]
    if stacked.size == 0:
        return np.empty((0, 2), dtype=np.intp)
    return np.unique(np.sort(stacked, axis=1), axis=0).astype(np.intp)


def lbp_codes(image) -> np.ndarray:
    """8-neighbor radius-1 binary codes of the luminance raster.

    Bits run clockwise from the top-left neighbor; a bit is set when the
    neighbor is >= the center.  Border neighbors replicate the edge pixel.
    """
    luma = np.asarray(image, dtype=float) @ LUMA
    padded = np.pad(luma, 1, mode="edge")
    offsets = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)]
    codes = np.zeros(luma.shape, dtype=np.intp)
    for bit, (dr, dc) in enumerate(offsets):
        neighbor = padded[1 + dr : 1 + dr + luma.shape[0], 1 + dc : 1 + dc + luma.shape[1]]
        codes |= (neighbor >= luma) << bit
    return codes


def _label_histograms(labels, values, bins, count):
    hist = np.bincount(
        labels.ravel() * bins + values.ravel(), minlength=count * bins
    ).reshape(count, bins)
    return hist


def _area_average_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) matrix averaging equal real-length source spans per cell."""
    ratio = src / dst
    weights = np.zeros((dst, src))
    for i in range(dst):
        lo, hi = i * ratio, (i + 1) * ratio
        for j in range(int(np.floor(lo)), int(np.ceil(hi))):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                weights[i, j] = overlap / ratio
    return weights


def extract_features(sample: SceneSample, box_size: int, patch_dim: int,
                     use_centroid_depth: bool = False) -> SuperpixelFeatures:
    """Per-superpixel descriptors; the sample must carry labels and centroids."""
    if sample.labels is None or sample.centroids is None:
        raise ValueError("sample must be segmented first")
    if box_size < 1 or patch_dim < 1:
        raise ValueError("box size and patch resolution must be positive")
    image, labels, centroids = sample.image, sample.labels, sample.centroids
    height, width = sample.shape
    count = int(labels.max()) + 1
    sizes = np.bincount(labels.ravel(), minlength=count).astype(float)

    mean_color = np.stack(
        [
            np.bincount(labels.ravel(), weights=image[..., c].ravel(), minlength=count)
            / sizes
            for c in range(3)
        ],
        axis=1,
    )

    bin_idx = np.minimum((image * COLOR_BINS).astype(np.intp), COLOR_BINS - 1)
    color_hist = np.concatenate(
        [_label_histograms(labels, bin_idx[..., c], COLOR_BINS, count) for c in range(3)],
        axis=1,
    ).astype(float)
    color_hist /= color_hist.sum(axis=1, keepdims=True)

    lbp_hist = _label_histograms(labels, lbp_codes(image), LBP_BINS, count).astype(float)
    lbp_hist /= lbp_hist.sum(axis=1, keepdims=True)

    shrink = _area_average_weights(box_size, patch_dim)
    patches = np.empty((count, patch_dim, patch_dim, 3))
    for i in range(count):
        r0 = int(np.floor(centroids[i, 0] + 0.5)) - box_size // 2
        c0 = int(np.floor(centroids[i, 1] + 0.5)) - box_size // 2
        rows = np.clip(np.arange(r0, r0 + box_size), 0, height - 1)
        cols = np.clip(np.arange(c0, c0 + box_size), 0, width - 1)
        crop = image[np.ix_(rows, cols)]
        patches[i] = np.einsum("ir,rcd,jc->ijd", shrink, crop, shrink)
    patch = patches.reshape(count, -1)

    gt_logdepth = None
    if sample.depth is not None:
        if use_centroid_depth:
            rr = np.clip(np.rint(centroids[:, 0]).astype(int), 0, height - 1)
            cc = np.clip(np.rint(centroids[:, 1]).astype(int), 0, width - 1)
            gt_logdepth = np.log(sample.depth[rr, cc])
        else:
            mean_depth = (
                np.bincount(labels.ravel(), weights=sample.depth.ravel(), minlength=count)
                / sizes
            )
            gt_logdepth = np.log(mean_depth)

    return SuperpixelFeatures(
        mean_color=mean_color,
        color_hist=color_hist,
        lbp_hist=lbp_hist,
        patch=patch,
        gt_logdepth=gt_logdepth,
    )


def similarities(features: SuperpixelFeatures, gammas, edges, count: int) -> np.ndarray:
    """exp(-gamma_k ||f_p - f_q||) per channel, zero off the edge set."""
    gammas = np.asarray(gammas, dtype=float)
    if gammas.shape != (3,) or np.any(gammas <= 0):
        raise ValueError("gammas must be three positive reals")
    stack = np.zeros((3, count, count))
    if edges.size == 0:
        return stack
    channels = (features.mean_color, features.color_hist, features.lbp_hist)
    p, q = edges[:, 0], edges[:, 1]
    for k, (gamma, feats) in enumerate(zip(gammas, channels)):
        dists = np.linalg.norm(feats[p] - feats[q], axis=1)
        values = np.exp(-gamma * dists)
        stack[k, p, q] = values
        stack[k, q, p] = values
    return stack


def build_graph(sample: SceneSample, cfg: GraphConfig) -> GraphData:
    """Segment, describe and connect a scene in one call."""
    labels, centroids = segment(
        sample.image, cfg.target_superpixels, cfg.compactness, cfg.seg_mode
    )
    segmented = SceneSample(
        image=sample.image, depth=sample.depth, labels=labels, centroids=centroids
    )
    features = extract_features(
        segmented, cfg.box_size, cfg.patch_dim, cfg.use_centroid_depth
    )
    edges = adjacency(labels)
    sims = similarities(features, cfg.gammas, edges, int(labels.max()) + 1)
    return GraphData(
        labels=labels,
        centroids=centroids,
        features=features,
        edges=edges,
        similarities=sims,
    )
