"""Cosine classification head, box-delta regressor, and the total objective.

Scoring rule: region features pass through a trainable linear projection
(identity at init, so the frozen path is untouched), cosine similarity
against every object prototype is computed, only the top_k = min(5, N) class
candidates survive (the rest are masked far below any reachable logit), a
single background channel takes the max similarity over background
prototypes, and a softmax with temperature cls_temperature turns the row
into a distribution. The regressor maps [roi feature || matched prototype]
to four box deltas in the usual center-offset/log-size parameterization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tape,
    add,
    concat_cols,
    constant,
    cosine_similarity_matrix,
    cross_entropy_with_logits,
    gather_rows,
    matmul,
    mean,
    row_max,
    row_softmax,
    scale,
    smooth_l1,
)
from .errors import ContractError, ShapeError
from .featurepack import Box
from .prototypes import PrototypeSet
from .rng import STREAM_HEAD_INIT, stream

BACKGROUND = -1  # gt_class value marking a background region

# additive logit mask; far below cos/temperature for any admissible temperature
_MASK = -1e9


@dataclass
class QueryRegion:
    roi_feature: np.ndarray  # (D,), unit norm
    proposal_box: Box | None = None
    gt_class: int | None = None  # episode-local label, or BACKGROUND
    gt_box: Box | None = None

    def __post_init__(self):
        if self.gt_box is not None and self.gt_class is None:
            raise ContractError("region with gt_box must carry gt_class")


@dataclass
class HeadState:
    """Numpy-side head parameters."""

    cls_w: np.ndarray  # (D, D), identity at init
    cls_b: np.ndarray  # (1, D)
    box_w: np.ndarray  # (2D, 4)
    box_b: np.ndarray  # (1, 4)


def init_head_state(dim: int, seed: int) -> HeadState:
    rng = stream(seed, STREAM_HEAD_INIT)
    bound = 1.0 / np.sqrt(2 * dim)
    return HeadState(
        cls_w=np.eye(dim),
        cls_b=np.zeros((1, dim)),
        box_w=rng.uniform(-bound, bound, size=(2 * dim, 4)),
        box_b=np.zeros((1, 4)),
    )


@dataclass
class HeadParams:
    cls_w: Tensor
    cls_b: Tensor
    box_w: Tensor
    box_b: Tensor
    cls_temperature: float = 0.1
    top_k: int | None = None  # None -> min(5, N) at scoring time


def bind_head(
    state: HeadState, tape: Tape, trainable: bool, cls_temperature: float = 0.1, top_k: int | None = None
) -> HeadParams:
    return HeadParams(
        cls_w=tape.leaf(state.cls_w, requires_grad=trainable),
        cls_b=tape.leaf(state.cls_b, requires_grad=trainable),
        box_w=tape.leaf(state.box_w, requires_grad=trainable),
        box_b=tape.leaf(state.box_b, requires_grad=trainable),
        cls_temperature=cls_temperature,
        top_k=top_k,
    )


def effective_top_k(params: HeadParams, n_way: int) -> int:
    k = min(5, n_way) if params.top_k is None else min(params.top_k, n_way)
    if k < 1:
        raise ContractError(f"top_k must be >= 1, got {k}")
    return k


def region_logits(features: Tensor, protos: PrototypeSet, params: HeadParams) -> Tensor:
    """Masked, temperature-scaled logits (R, N) or (R, N+1) with a background column."""
    if protos.n_way < 1:
        raise ContractError("prototype set has no object classes")
    if features.shape[1] != protos.dim:
        raise ShapeError(f"feature dim {features.shape[1]} vs prototype dim {protos.dim}")
    projected = add(matmul(features, params.cls_w), params.cls_b)
    sims = cosine_similarity_matrix(projected, protos.object_prototypes)  # (R, N)
    scaled = scale(sims, 1.0 / params.cls_temperature)

    k = effective_top_k(params, protos.n_way)
    if k < protos.n_way:
        # mask is a constant built from forward values; with k = N it is a no-op
        mask = np.full(scaled.shape, _MASK)
        order = np.argsort(-sims.data, axis=1, kind="stable")
        for r in range(mask.shape[0]):
            mask[r, order[r, :k]] = 0.0
        scaled = add(scaled, constant(mask))

    if protos.background_prototypes is None:
        return scaled
    bg_sims = cosine_similarity_matrix(projected, protos.background_prototypes)
    bg = scale(row_max(bg_sims), 1.0 / params.cls_temperature)  # (R, 1)
    return concat_cols([scaled, bg])


def classify_region(region: QueryRegion, protos: PrototypeSet, params: HeadParams) -> np.ndarray:
    """Probability vector over N classes (+ background last, when present)."""
    logits = region_logits(constant(region.roi_feature.reshape(1, -1)), protos, params)
    return row_softmax(logits).data[0].copy()


def background_channel(protos: PrototypeSet) -> int | None:
    """Column index of the background outcome, or None without backgrounds."""
    return None if protos.background_prototypes is None else protos.n_way


def classification_loss(regions: list[QueryRegion], protos: PrototypeSet, params: HeadParams) -> Tensor:
    if not regions:
        raise ContractError("classification loss needs at least one region")
    labels = []
    for i, r in enumerate(regions):
        if r.gt_class is None:
            raise ContractError(f"region {i} lacks gt_class")
        if r.gt_class == BACKGROUND:
            bg = background_channel(protos)
            if bg is None:
                raise ContractError(f"region {i} is background but the prototype set has no backgrounds")
            labels.append(bg)
        else:
            if not (0 <= r.gt_class < protos.n_way):
                raise ContractError(f"region {i}: gt_class {r.gt_class} not in [0, {protos.n_way})")
            labels.append(r.gt_class)
    features = constant(np.stack([r.roi_feature for r in regions]))
    logits = region_logits(features, protos, params)
    return cross_entropy_with_logits(logits, np.asarray(labels))


def box_to_deltas(proposal: Box, gt: Box) -> np.ndarray:
    """(dx, dy, dw, dh): center offsets scaled by proposal size, log size ratios."""
    px, py, pw, ph = _center_form(proposal)
    gx, gy, gw, gh = _center_form(gt)
    if pw <= 0 or ph <= 0 or gw <= 0 or gh <= 0:
        raise ContractError(f"degenerate box in delta computation: {proposal} vs {gt}")
    return np.array([(gx - px) / pw, (gy - py) / ph, np.log(gw / pw), np.log(gh / ph)])


def apply_deltas(proposal: Box, deltas: np.ndarray) -> Box:
    px, py, pw, ph = _center_form(proposal)
    cx = px + deltas[0] * pw
    cy = py + deltas[1] * ph
    w = pw * np.exp(deltas[2])
    h = ph * np.exp(deltas[3])
    return (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def _center_form(box: Box) -> tuple[float, float, float, float]:
    x0, y0, x1, y1 = box
    return ((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)


def localization_loss(regions: list[QueryRegion], protos: PrototypeSet, params: HeadParams) -> Tensor:
    """Mean smooth-L1 over all delta entries of the boxed object regions."""
    boxed = [r for r in regions if r.gt_box is not None and r.gt_class != BACKGROUND]
    if not boxed:
        return constant(np.zeros((1, 1)))
    for r in boxed:
        if r.proposal_box is None:
            raise ContractError("boxed region lacks a proposal box")
    features = constant(np.stack([r.roi_feature for r in boxed]))
    matched = gather_rows(protos.object_prototypes, [r.gt_class for r in boxed])
    pred = add(matmul(concat_cols([features, matched]), params.box_w), params.box_b)
    targets = constant(np.stack([box_to_deltas(r.proposal_box, r.gt_box) for r in boxed]))
    return mean(smooth_l1(pred, targets))


def total_loss(l_loc: Tensor, l_cls: Tensor, l_dp: Tensor | None = None) -> Tensor:
    out = add(l_loc, l_cls)
    return out if l_dp is None else add(out, l_dp)
