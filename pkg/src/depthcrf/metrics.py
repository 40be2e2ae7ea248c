"""Depth error metrics and raster prediction.

All metrics pool pixels across every evaluated image before averaging (one
grand total, no per-image means).  With d the prediction and g > 0 the
ground truth, over the T masked-in pixels:

    rel    = (1/T) sum |g - d| / g
    rms    = sqrt((1/T) sum (g - d)^2)
    log10  = (1/T) sum |log10 g - log10 d|
    delta_i = 100 * fraction with max(g/d, d/g) < 1.25^i,  i = 1, 2, 3

Two standard evaluation masks: pixels with ground truth below a depth cap,
and all pixels.  Prediction paints each superpixel's region with the
exponential of its most probable log-depth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import crf, unary
from .crf import CrfInstance, PairwiseWeights
from .graph import GraphConfig, SceneSample, build_graph

THRESHOLD = 1.25


@dataclass(frozen=True)
class DepthPair:
    """Predicted and ground-truth rasters with an evaluation mask."""

    predicted: np.ndarray
    ground_truth: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        pred = np.asarray(self.predicted, dtype=float)
        gt = np.asarray(self.ground_truth, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if pred.shape != gt.shape or mask.shape != gt.shape:
            raise ValueError("prediction, ground truth and mask must share a shape")
        for arr in (pred[mask], gt[mask]):
            if arr.size and (not np.all(np.isfinite(arr)) or np.any(arr <= 0.0)):
                raise ValueError("masked-in depths must be finite and positive")
        object.__setattr__(self, "predicted", pred)
        object.__setattr__(self, "ground_truth", gt)
        object.__setattr__(self, "mask", mask)


@dataclass(frozen=True)
class MetricsReport:
    rel: float
    rms: float
    log10: float
    delta1: float
    delta2: float
    delta3: float
    pixel_count: int


def metrics(pairs) -> MetricsReport:
    """Pooled metrics over a collection of DepthPair."""
    pred = np.concatenate([p.predicted[p.mask] for p in pairs]) if pairs else np.array([])
    gt = np.concatenate([p.ground_truth[p.mask] for p in pairs]) if pairs else np.array([])
    if pred.size == 0:
        raise ValueError("no pixels selected for evaluation")
    ratio = np.maximum(gt / pred, pred / gt)
    deltas = [float(np.mean(ratio < THRESHOLD**i) * 100.0) for i in (1, 2, 3)]
    return MetricsReport(
        rel=float(np.mean(np.abs(gt - pred) / gt)),
        rms=float(np.sqrt(np.mean((gt - pred) ** 2))),
        log10=float(np.mean(np.abs(np.log10(gt) - np.log10(pred)))),
        delta1=deltas[0],
        delta2=deltas[1],
        delta3=deltas[2],
        pixel_count=int(pred.size),
    )


def capped_masks(ground_truth, cap: float):
    """(below-cap mask, everything mask) for one ground-truth raster."""
    gt = np.asarray(ground_truth, dtype=float)
    return gt < cap, np.ones_like(gt, dtype=bool)


@dataclass
class Predictor:
    """A trained pipeline: regressor, couplings, graph recipe, input scaling."""

    model: unary.UnaryModel
    beta: np.ndarray
    graph_cfg: GraphConfig
    input_mean: np.ndarray
    input_std: np.ndarray


def predict_logdepth(sample: SceneSample, predictor: Predictor):
    """Superpixel log-depths and the labeling they live on."""
    data = build_graph(sample, predictor.graph_cfg)
    inputs = (data.features.patch - predictor.input_mean) / predictor.input_std
    z, _ = unary.forward(predictor.model, inputs)
    instance = CrfInstance(z=z, similarities=data.similarities, edges=data.edges)
    star = crf.map_infer(instance, PairwiseWeights(predictor.beta))
    return star, data.labels


def predict_image(sample: SceneSample, predictor: Predictor) -> np.ndarray:
    """Depth raster: each superpixel painted with exp(its MAP log-depth)."""
    star, labels = predict_logdepth(sample, predictor)
    return np.exp(star)[labels]
