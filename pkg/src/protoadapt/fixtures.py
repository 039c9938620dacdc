"""Random fixtures for finite-difference gradient verification.

Each case packages a named loss as a pure function of leaf matrices plus a
concrete evaluation point, sized small so the full central-difference sweep
over every parameter entry stays fast. Pieces that are only piecewise
smooth get guarded at generation time: fixtures keep top_k = N (no
candidate masking) and resample until every background max-similarity has a
clear top-2 gap, so the finite-difference probe never crosses a kink.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tensor, constant, grad_check, l2_normalize_rows
from .errors import ContractError
from .heads import BACKGROUND, HeadParams, QueryRegion, classification_loss, localization_loss, total_loss
from .prompter import (
    DomainVectors,
    DpConfig,
    domain_diversity_loss,
    dp_loss_terms,
    perturbed_classification_loss,
    prototype_consistency_loss,
    sample_pair_choice,
)
from .prototypes import LearnableInstances, PrototypeSet, ReweightParams, assemble_prototypes, reweight_prototypes
from .rng import STREAM_FIXTURE, stream

GRADCHECK_LOSSES = ("cls", "loc", "domain", "proto", "proto_cls", "objective")

_N, _K, _NBG, _D = 3, 2, 3, 8
_NAMES = [f"class-{c:02d}" for c in range(_N)]
_GAP = 1e-3  # required top-2 margin wherever a max picks a winner


@dataclass
class GradCheckCase:
    name: str
    loss_fn: Callable[[dict[str, Tensor]], Tensor]
    point: dict[str, np.ndarray]


def _unit_rows(rng, n: int, d: int) -> np.ndarray:
    rows = rng.standard_normal((n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _top2_gap(scores: np.ndarray) -> float:
    if scores.shape[1] < 2:
        return np.inf
    part = np.sort(scores, axis=1)
    return float((part[:, -1] - part[:, -2]).min())


def _bg_gaps_ok(features: np.ndarray, point: dict[str, np.ndarray]) -> bool:
    """True when every row's best background similarity wins by a margin."""
    projected = features @ point["cls_w"] + point["cls_b"]
    projected = projected / np.linalg.norm(projected, axis=1, keepdims=True)
    bg = point["instances"][_N * _K :]
    bg = bg / np.linalg.norm(bg, axis=1, keepdims=True)
    return _top2_gap(projected @ bg.T) > _GAP


def _draw_shared_point(rng) -> dict[str, np.ndarray]:
    return {
        "instances": rng.standard_normal((_N * _K + _NBG, _D)),
        "mlp_w": rng.standard_normal((_D, 1)) / np.sqrt(_D),
        "mlp_b": rng.standard_normal((1, 1)) * 0.1,
        "fuse_w": np.eye(_D) + 0.1 * rng.standard_normal((_D, _D)),
        "fuse_b": 0.1 * rng.standard_normal((1, _D)),
        "cls_w": np.eye(_D) + 0.1 * rng.standard_normal((_D, _D)),
        "cls_b": 0.1 * rng.standard_normal((1, _D)),
        "box_w": rng.standard_normal((2 * _D, 4)) / np.sqrt(2 * _D),
        "box_b": 0.1 * rng.standard_normal((1, 4)),
        "domains": 0.5 * rng.standard_normal((2 * _N, _D)),
    }


def _pipeline(t: dict[str, Tensor]) -> tuple[PrototypeSet, HeadParams]:
    instances = LearnableInstances(t["instances"], _N, _K, _NBG)
    reweight = ReweightParams(t["mlp_w"], t["mlp_b"], t["fuse_w"], t["fuse_b"], alpha=0.7)
    protos = assemble_prototypes(reweight_prototypes(instances, reweight), instances, _NAMES)
    head = HeadParams(t["cls_w"], t["cls_b"], t["box_w"], t["box_b"], cls_temperature=0.1, top_k=None)
    return protos, head


def _regions(rng, with_boxes: bool) -> list[QueryRegion]:
    features = _unit_rows(rng, _N + 2, _D)
    regions = []
    for i in range(_N):
        box = None
        proposal = None
        if with_boxes:
            x0, y0 = rng.uniform(0, 50, size=2)
            w, h = rng.uniform(10, 30, size=2)
            box = (float(x0), float(y0), float(x0 + w), float(y0 + h))
            jx, jy = rng.uniform(-5, 5, size=2)
            proposal = (box[0] + jx, box[1] + jy, box[2] + jx * 0.5, box[3] + jy * 0.5)
        regions.append(QueryRegion(features[i], proposal_box=proposal, gt_class=i, gt_box=box))
    regions.append(QueryRegion(features[_N], gt_class=BACKGROUND))
    regions.append(QueryRegion(features[_N + 1], gt_class=BACKGROUND))
    return regions


def _region_features(regions: list[QueryRegion]) -> np.ndarray:
    return np.stack([r.roi_feature for r in regions])


def make_case(loss: str, index: int, seed: int) -> GradCheckCase:
    """Build the index-th fixture for a named loss, resampling past kinks."""
    rng = stream(seed, STREAM_FIXTURE)
    # burn a deterministic amount of state so cases differ but stay replayable
    for _ in range(index + 1):
        rng.standard_normal(16)

    if loss == "domain":
        point = {"domains": rng.standard_normal((2 * _N, _D))}
        return GradCheckCase(
            name=f"domain[{index}]",
            loss_fn=lambda t: domain_diversity_loss(DomainVectors(t["domains"]), tau=0.1),
            point=point,
        )

    if loss == "proto":
        pairs = sample_pair_choice(_N, 2 * _N, rng)
        point = {
            "protos": _unit_rows(rng, _N, _D),
            "domains": 0.5 * rng.standard_normal((2 * _N, _D)),
        }
        return GradCheckCase(
            name=f"proto[{index}]",
            loss_fn=lambda t: prototype_consistency_loss(t["protos"], DomainVectors(t["domains"]), pairs, tau=2.0),
            point=point,
        )

    if loss == "proto_cls":
        for _ in range(50):
            pairs = sample_pair_choice(_N, 2 * _N, rng)
            point = _draw_shared_point(rng)

            def loss_fn(t, pairs=pairs):
                protos, head = _pipeline(t)
                return perturbed_classification_loss(protos, DomainVectors(t["domains"]), pairs, head)

            perturbed = _numpy_prototypes(point)[[i for i in range(_N) for _ in range(2)]]
            perturbed = perturbed + point["domains"][[d for k, m in pairs for d in (k, m)]]
            if _bg_gaps_ok(perturbed, point):
                return GradCheckCase(name=f"proto_cls[{index}]", loss_fn=loss_fn, point=point)
        raise ContractError(f"no kink-free proto_cls fixture found for index {index}")

    if loss == "cls":
        for _ in range(50):
            point = _draw_shared_point(rng)
            regions = _regions(rng, with_boxes=False)

            def loss_fn(t, regions=regions):
                protos, head = _pipeline(t)
                return classification_loss(regions, protos, head)

            if _bg_gaps_ok(_region_features(regions), point):
                return GradCheckCase(name=f"cls[{index}]", loss_fn=loss_fn, point=point)
        raise ContractError(f"no kink-free cls fixture found for index {index}")

    if loss == "loc":
        point = _draw_shared_point(rng)
        regions = _regions(rng, with_boxes=True)

        def loss_fn(t, regions=regions):
            protos, head = _pipeline(t)
            return localization_loss(regions, protos, head)

        return GradCheckCase(name=f"loc[{index}]", loss_fn=loss_fn, point=point)

    if loss == "objective":
        config = DpConfig()
        for _ in range(50):
            pairs = sample_pair_choice(_N, 2 * _N, rng)
            point = _draw_shared_point(rng)
            regions = _regions(rng, with_boxes=True)

            def loss_fn(t, pairs=pairs, regions=regions):
                protos, head = _pipeline(t)
                terms = dp_loss_terms(DomainVectors(t["domains"]), protos, pairs, config, head)
                return total_loss(
                    localization_loss(regions, protos, head),
                    classification_loss(regions, protos, head),
                    terms.total,
                )

            perturbed = _numpy_prototypes(point)[[i for i in range(_N) for _ in range(2)]]
            perturbed = perturbed + point["domains"][[d for k, m in pairs for d in (k, m)]]
            if _bg_gaps_ok(_region_features(regions), point) and _bg_gaps_ok(perturbed, point):
                return GradCheckCase(name=f"objective[{index}]", loss_fn=loss_fn, point=point)
        raise ContractError(f"no kink-free objective fixture found for index {index}")

    raise ContractError(f"unknown loss {loss!r}; valid: {GRADCHECK_LOSSES}")


def _numpy_prototypes(point: dict[str, np.ndarray]) -> np.ndarray:
    """Mirror of the prototype pipeline used only for kink screening."""
    t = {k: constant(v) for k, v in point.items()}
    instances = LearnableInstances(t["instances"], _N, _K, _NBG)
    reweight = ReweightParams(t["mlp_w"], t["mlp_b"], t["fuse_w"], t["fuse_b"], alpha=0.7)
    return l2_normalize_rows(reweight_prototypes(instances, reweight)).data


def run_gradcheck(
    losses: tuple[str, ...] = GRADCHECK_LOSSES, count: int = 20, seed: int = 0, eps: float = 1e-5
) -> dict[str, float]:
    """Worst relative error per loss over `count` fixtures each."""
    worst: dict[str, float] = {}
    for loss in losses:
        errs = [grad_check(case.loss_fn, case.point, eps=eps) for case in (make_case(loss, i, seed) for i in range(count))]
        worst[loss] = max(errs)
    return worst
