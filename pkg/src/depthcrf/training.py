"""Joint training of the regressor and the pairwise coupling coefficients.

The objective over a dataset of prepared scenes is

    sum_i nll_i(theta, beta) + (l1/2) |theta|^2 + (l2/2) |beta|^2

minimized by stochastic gradient descent, one image per step, with classic
momentum: v <- mu v - lr g, param <- param + v.  After every step beta is
projected back onto beta >= 0.  The learning rate starts at ``lr0`` and is
multiplied by ``lr_decay`` every ``lr_decay_every`` epochs.  Scene order is
reshuffled every epoch from the run's own generator, so a (config, dataset)
pair determines the final state exactly.

The unary-only baseline is the identical loop with beta frozen at zero; a
regressor-warmup phase can freeze the first layer instead.  Regressor inputs
are flattened patches standardized per dimension with training-set statistics
(kept with the model so prediction can reproduce them).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import crf, unary
from .crf import CrfInstance, PairwiseWeights
from .graph import GraphConfig, build_graph

STD_FLOOR = 1e-8
NUM_CHANNELS = 3


@dataclass(frozen=True)
class TrainConfig:
    momentum: float = 0.9
    lambda1: float = 5e-4
    lambda2: float = 5e-4
    lr0: float = 1e-4
    lr_decay: float = 0.6
    lr_decay_every: int = 20
    epochs: int = 60
    dropout_keep: float = 0.5
    seed: int = 0
    beta_init: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("weight decay cannot be negative")
        if self.lr0 < 0 or not 0.0 < self.lr_decay <= 1.0 or self.lr_decay_every < 1:
            raise ValueError("bad learning-rate schedule")
        if self.epochs < 0:
            raise ValueError("epochs cannot be negative")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ValueError("dropout keep probability must be in (0, 1]")
        if self.beta_init < 0:
            raise ValueError("beta must start nonnegative")


@dataclass
class PreparedScene:
    """One image, ready for the loss: standardized inputs, graph, targets."""

    inputs: np.ndarray
    similarities: np.ndarray
    edges: np.ndarray
    target: np.ndarray

    @property
    def n(self):
        return self.target.size


@dataclass
class EpochStats:
    epoch: int
    lr: float
    mean_nll: float


@dataclass
class TrainState:
    model: unary.UnaryModel
    beta: np.ndarray
    theta_velocity: np.ndarray
    beta_velocity: np.ndarray
    rng: np.random.Generator
    epoch: int = 0
    history: list[EpochStats] = field(default_factory=list)


def input_stats(scenes) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and (floored) standard deviation of raw inputs."""
    stacked = np.concatenate([s.inputs for s in scenes], axis=0)
    return stacked.mean(axis=0), np.maximum(stacked.std(axis=0), STD_FLOOR)


def prepare_scene(sample, graph_cfg: GraphConfig) -> PreparedScene:
    """Segment and featurize one training sample; inputs stay raw here."""
    data = build_graph(sample, graph_cfg)
    if data.features.gt_logdepth is None:
        raise ValueError("training scenes need ground-truth depth")
    template = CrfInstance(
        z=np.zeros(data.features.gt_logdepth.size),
        similarities=data.similarities,
        edges=data.edges,
        y=data.features.gt_logdepth,
    )
    return PreparedScene(
        inputs=data.features.patch,
        similarities=template.similarities,
        edges=template.edges,
        target=template.y,
    )


def prepare_dataset(samples, graph_cfg: GraphConfig):
    """Prepared scenes plus the standardization statistics applied to them."""
    scenes = [prepare_scene(sample, graph_cfg) for sample in samples]
    mean, std = input_stats(scenes)
    for scene in scenes:
        scene.inputs = (scene.inputs - mean) / std
    return scenes, mean, std


def init_state(layer_dims, config: TrainConfig, num_channels: int = NUM_CHANNELS) -> TrainState:
    model = unary.build_model(layer_dims, seed=config.seed)
    return TrainState(
        model=model,
        beta=np.full(num_channels, float(config.beta_init)),
        theta_velocity=np.zeros(unary.parameter_count(layer_dims)),
        beta_velocity=np.zeros(num_channels),
        rng=np.random.default_rng(config.seed + 1),
    )


def current_lr(config: TrainConfig, epoch: int) -> float:
    return config.lr0 * config.lr_decay ** (epoch // config.lr_decay_every)


def step(state: TrainState, batch, config: TrainConfig, *,
         unary_only: bool = False, freeze_first_layer: bool = False) -> float:
    """One SGD step over a batch of scenes; returns the pre-update objective."""
    lr = current_lr(config, state.epoch)
    theta = unary.get_params(state.model)
    weights = PairwiseWeights(np.zeros_like(state.beta) if unary_only else state.beta)
    loss = 0.0
    grad_theta = np.zeros_like(theta)
    grad_beta = np.zeros_like(state.beta)
    for scene in batch:
        z, tape = unary.forward(
            state.model,
            scene.inputs,
            mode="train",
            rng=state.rng,
            keep_prob=config.dropout_keep,
        )
        instance = CrfInstance(
            z=z,
            similarities=scene.similarities,
            edges=scene.edges,
            y=scene.target,
            validate=False,
        )
        value, gz, gb = crf.nll_with_grads(instance, weights)
        loss += value
        grad_theta += unary.backward(state.model, tape, gz)
        grad_beta += gb
    beta_now = weights.beta
    loss += 0.5 * config.lambda1 * float(theta @ theta)
    loss += 0.5 * config.lambda2 * float(beta_now @ beta_now)
    grad_theta += config.lambda1 * theta
    if freeze_first_layer:
        grad_theta[unary.first_layer_slice(state.model)] = 0.0
    state.theta_velocity = config.momentum * state.theta_velocity - lr * grad_theta
    unary.set_params(state.model, theta + state.theta_velocity)
    if not unary_only:
        grad_beta += config.lambda2 * state.beta
        state.beta_velocity = config.momentum * state.beta_velocity - lr * grad_beta
        state.beta = np.maximum(state.beta + state.beta_velocity, 0.0)
    return loss


def train(scenes, config: TrainConfig, layer_dims=None, *, state: TrainState | None = None,
          unary_only: bool = False, freeze_first_layer: bool = False) -> TrainState:
    """Run the epoch loop; resumes from ``state`` when given."""
    if not scenes:
        raise ValueError("training needs at least one scene")
    if state is None:
        if layer_dims is None:
            raise ValueError("need layer_dims to initialize a fresh state")
        state = init_state(layer_dims, config)
    if unary_only:
        state.beta = np.zeros_like(state.beta)
    for _ in range(config.epochs):
        lr = current_lr(config, state.epoch)
        order = state.rng.permutation(len(scenes))
        losses = [
            step(state, [scenes[i]], config,
                 unary_only=unary_only, freeze_first_layer=freeze_first_layer)
            for i in order
        ]
        state.history.append(
            EpochStats(epoch=state.epoch, lr=lr, mean_nll=float(np.mean(losses)))
        )
        state.epoch += 1
    return state


def train_unary_only(scenes, config: TrainConfig, layer_dims=None, *,
                     state: TrainState | None = None) -> TrainState:
    """The coupling-free baseline: same loop, beta pinned to zero."""
    return train(scenes, config, layer_dims, state=state, unary_only=True)
