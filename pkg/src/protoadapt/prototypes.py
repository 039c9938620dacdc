"""Learnable instance features and instance reweighting.

The support matrix is promoted to a trainable parameter block (first N*K rows
are object instances grouped by class, then N_bg background rows), initialized
bit-equal to the frozen embeddings. Object prototypes come out of a two-path
residual reweighting: per class, an attention path (one FC layer D -> 1,
softmax over the K instances, weighted sum, then a fuse layer D -> D) is
blended with the plain mean at weight alpha. Background rows never pass
through the reweighting; they stay per-instance prototypes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    add,
    concat_rows,
    constant,
    l2_normalize_rows,
    matmul,
    row_softmax,
    scale,
    slice_rows,
    transpose,
)
from .episodes import Episode
from .errors import ShapeError, ValidationError
from .rng import STREAM_REWEIGHT_INIT, stream


@dataclass
class LearnableInstances:
    matrix: Tensor  # (N*K + N_bg, D), requires_grad
    n_way: int
    k_shot: int
    n_background: int

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def class_rows(self, c: int) -> Tensor:
        return slice_rows(self.matrix, c * self.k_shot, (c + 1) * self.k_shot)

    def background_rows(self) -> Tensor | None:
        if self.n_background == 0:
            return None
        start = self.n_way * self.k_shot
        return slice_rows(self.matrix, start, start + self.n_background)


def stack_episode_instances(episode: Episode) -> np.ndarray:
    """Support rows grouped by class, then backgrounds, as (N*K + N_bg, D)."""
    rows = [episode.pack.records[i].embedding for row in episode.support_indices for i in row]
    rows += [episode.pack.records[i].embedding for i in episode.background_indices]
    return np.stack(rows, axis=0)


def init_learnable_instances(episode: Episode, tape: Tape) -> LearnableInstances:
    matrix = tape.leaf(stack_episode_instances(episode), requires_grad=True)
    return LearnableInstances(
        matrix=matrix,
        n_way=episode.n_way,
        k_shot=episode.k_shot,
        n_background=len(episode.background_indices),
    )


@dataclass
class ReweightState:
    """Numpy-side parameter block for the reweighting module."""

    mlp_w: np.ndarray  # (D, 1)
    mlp_b: np.ndarray  # (1, 1)
    fuse_w: np.ndarray  # (D, D), starts near identity
    fuse_b: np.ndarray  # (1, D)


def init_reweight_state(dim: int, seed: int) -> ReweightState:
    rng = stream(seed, STREAM_REWEIGHT_INIT)
    bound = 1.0 / np.sqrt(dim)
    mlp_w = rng.uniform(-bound, bound, size=(dim, 1))
    # near-identity start keeps the attention path close to the reweighting-off baseline
    fuse_w = np.eye(dim) + 0.01 * rng.uniform(-bound, bound, size=(dim, dim))
    return ReweightState(
        mlp_w=mlp_w,
        mlp_b=np.zeros((1, 1)),
        fuse_w=fuse_w,
        fuse_b=np.zeros((1, dim)),
    )


@dataclass
class ReweightParams:
    """Tape-bound reweighting parameters plus the residual blend weight."""

    mlp_w: Tensor
    mlp_b: Tensor
    fuse_w: Tensor
    fuse_b: Tensor
    alpha: float

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha}")


def bind_reweight(state: ReweightState, alpha: float, tape: Tape, trainable: bool) -> ReweightParams:
    return ReweightParams(
        mlp_w=tape.leaf(state.mlp_w, requires_grad=trainable),
        mlp_b=tape.leaf(state.mlp_b, requires_grad=trainable),
        fuse_w=tape.leaf(state.fuse_w, requires_grad=trainable),
        fuse_b=tape.leaf(state.fuse_b, requires_grad=trainable),
        alpha=alpha,
    )


def class_attention_weights(rows: Tensor, params: ReweightParams) -> Tensor:
    """Softmax weights over the K instances of one class, shape (1, K)."""
    logits = add(matmul(rows, params.mlp_w), params.mlp_b)  # (K, 1)
    return row_softmax(transpose(logits))


def reweight_prototypes(instances: LearnableInstances, params: ReweightParams) -> Tensor:
    """Two-path residual prototypes, one row per class: a*fuse(F_att) + (1-a)*F_avg."""
    if params.mlp_w.shape != (instances.dim, 1):
        raise ShapeError(f"mlp weight shape {params.mlp_w.shape} does not match dim {instances.dim}")
    k = instances.k_shot
    uniform = constant(np.full((1, k), 1.0 / k))
    per_class = []
    for c in range(instances.n_way):
        rows = instances.class_rows(c)
        weights = class_attention_weights(rows, params)
        attended = matmul(weights, rows)  # (1, D)
        fused = add(matmul(attended, params.fuse_w), params.fuse_b)
        averaged = matmul(uniform, rows)
        per_class.append(add(scale(fused, params.alpha), scale(averaged, 1.0 - params.alpha)))
    return concat_rows(per_class)


def mean_prototypes(instances: LearnableInstances) -> Tensor:
    """Plain per-class means: the reweighting-off path."""
    k = instances.k_shot
    uniform = constant(np.full((1, k), 1.0 / k))
    return concat_rows([matmul(uniform, instances.class_rows(c)) for c in range(instances.n_way)])


@dataclass
class PrototypeSet:
    object_prototypes: Tensor  # (N, D), unit rows
    background_prototypes: Tensor | None  # (N_bg, D), unit rows, or None
    class_names: list[str]

    @property
    def n_way(self) -> int:
        return self.object_prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.object_prototypes.shape[1]


def assemble_prototypes(
    object_prototypes: Tensor, instances: LearnableInstances, class_names: list[str]
) -> PrototypeSet:
    """Renormalize object rows, pass background rows through per-instance."""
    if object_prototypes.shape[0] != len(class_names):
        raise ShapeError(
            f"{object_prototypes.shape[0]} prototype rows for {len(class_names)} class names"
        )
    background = instances.background_rows()
    return PrototypeSet(
        object_prototypes=l2_normalize_rows(object_prototypes),
        background_prototypes=None if background is None else l2_normalize_rows(background),
        class_names=list(class_names),
    )
