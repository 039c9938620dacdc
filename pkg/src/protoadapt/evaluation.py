"""Episode evaluation: query accuracy, detection mAP, and the ablation harness.

Classification accuracy is the fraction of query regions whose argmax score
(background competing as its own outcome) matches the ground-truth class.
Detection runs the full pipeline per image: score every annotated query
region, regress a box from its jittered proposal, apply greedy class-wise
NMS at IoU 0.5, then match detections to ground truths greedily in
descending confidence at each IoU threshold. AP integrates the monotone
precision envelope at every point; mAP averages classes with at least one
ground truth, then thresholds.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import constant, row_softmax
from .episodes import Episode
from .errors import ContractError
from .featurepack import Box
from .heads import apply_deltas, background_channel, region_logits
from .rng import STREAM_EVAL_JITTER, stream
from .training import (
    MODULE_DP,
    MODULE_FT_HEADS,
    MODULE_IR,
    MODULE_LIF,
    AdaptationParams,
    FinetuneConfig,
    TrainLog,
    bind_model,
    finetune,
    init_frozen_params,
    jitter_box,
)

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

STAGES = ("frozen", "FT-heads", "+LIF", "+IR", "+DP", "full")
STAGE_MODULES: dict[str, frozenset[str]] = {
    "frozen": frozenset(),
    "FT-heads": frozenset({MODULE_FT_HEADS}),
    "+LIF": frozenset({MODULE_FT_HEADS, MODULE_LIF}),
    "+IR": frozenset({MODULE_FT_HEADS, MODULE_LIF, MODULE_IR}),
    "+DP": frozenset({MODULE_FT_HEADS, MODULE_LIF, MODULE_IR, MODULE_DP}),
    "full": frozenset({MODULE_FT_HEADS, MODULE_LIF, MODULE_IR, MODULE_DP}),
}


def iou(a: Box, b: Box) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


@dataclass
class Detection:
    image_id: str
    box: Box
    class_index: int
    confidence: float


@dataclass
class GroundTruth:
    image_id: str
    box: Box
    class_index: int


@dataclass
class EvalReport:
    stage: str | None
    accuracy: float
    map_value: float | None
    per_class_ap: dict[str, float]
    map_by_threshold: dict[float, float]
    iou_thresholds: tuple[float, ...]
    episode_fingerprint: str
    config_fingerprint: str
    train_log: TrainLog | None = None

    def as_dict(self) -> dict:
        return {
            "stage": self.stage,
            "accuracy": self.accuracy,
            "map": self.map_value,
            "per_class_ap": self.per_class_ap,
            "map_by_threshold": {f"{t:.2f}": v for t, v in self.map_by_threshold.items()},
            "iou_thresholds": list(self.iou_thresholds),
            "episode_fingerprint": self.episode_fingerprint,
            "config_fingerprint": self.config_fingerprint,
        }


def _query_scores(params: AdaptationParams, episode: Episode) -> tuple[list[int], np.ndarray, np.ndarray]:
    """Flatten queries in pack order; return (record indices, probs, labels)."""
    indices = [i for per_image in episode.query_indices.values() for i in per_image]
    if not indices:
        raise ContractError("episode has no query records")
    model = bind_model(params, train=False)
    features = constant(np.stack([episode.pack.records[i].embedding for i in indices]))
    probs = row_softmax(region_logits(features, model.prototypes, model.head)).data
    labels = np.array([episode.local_label(episode.pack.records[i].class_index) for i in indices])
    return indices, probs, labels


def evaluate_classification(params: AdaptationParams, episode: Episode) -> float:
    """Fraction of queries whose argmax outcome is the true class."""
    _, probs, labels = _query_scores(params, episode)
    return float((probs.argmax(axis=1) == labels).mean())


def nms(detections: list[Detection], threshold: float = 0.5) -> list[Detection]:
    """Greedy class-wise suppression: drop any box overlapping a kept
    higher-confidence box of the same class by IoU > threshold."""
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].confidence, i))
    kept: list[Detection] = []
    for i in order:
        d = detections[i]
        if any(k.class_index == d.class_index and iou(k.box, d.box) > threshold for k in kept):
            continue
        kept.append(d)
    return kept


def average_precision(detections: list[Detection], truths: list[GroundTruth], threshold: float) -> float:
    """Single-class AP: greedy confidence-descending matching at an IoU
    threshold, then the area under the all-point precision envelope."""
    n_gt = len(truths)
    if n_gt == 0:
        raise ContractError("AP needs at least one ground truth")
    if not detections:
        return 0.0
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].confidence, i))
    used = [False] * n_gt
    tp = np.zeros(len(order))
    for rank, i in enumerate(order):
        d = detections[i]
        best, best_iou = -1, -1.0
        for j, g in enumerate(truths):
            if used[j] or g.image_id != d.image_id:
                continue
            v = iou(d.box, g.box)
            if v > best_iou:
                best, best_iou = j, v
        if best >= 0 and best_iou >= threshold:
            used[best] = True
            tp[rank] = 1.0
    cum_tp = np.cumsum(tp)
    precision = cum_tp / np.arange(1, len(order) + 1)
    recall = cum_tp / n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = 0.0
    ap = 0.0
    for r, p in zip(recall, envelope):
        ap += (r - prev) * p
        prev = r
    return float(ap)


def detect_episode(
    params: AdaptationParams,
    episode: Episode,
    proposal_jitter: float = 0.1,
    nms_threshold: float = 0.5,
) -> tuple[list[Detection], list[GroundTruth]]:
    """Score annotated queries, regress boxes, and suppress duplicates."""
    indices, probs, labels = _query_scores(params, episode)
    boxed = [k for k, i in enumerate(indices) if episode.pack.records[i].box is not None]
    if not boxed:
        raise ContractError("no query record carries a box; detection evaluation needs annotations")

    model = bind_model(params, train=False)
    protos = model.prototypes.object_prototypes.data
    box_w = params.values["head.box_w"]
    box_b = params.values["head.box_b"]
    bg = background_channel(model.prototypes)

    rng = stream(episode.spec.seed, STREAM_EVAL_JITTER)
    truths: list[GroundTruth] = []
    raw: dict[str, list[Detection]] = {}
    for k in boxed:
        record = episode.pack.records[indices[k]]
        truths.append(GroundTruth(record.image_id, record.box, int(labels[k])))
        proposal = jitter_box(record.box, proposal_jitter, rng)
        cls = int(probs[k].argmax())
        if bg is not None and cls == bg:
            continue
        # regressor input matches training: raw roi feature, matched prototype
        deltas = np.concatenate([record.embedding, protos[cls]]) @ box_w + box_b[0]
        raw.setdefault(record.image_id, []).append(
            Detection(record.image_id, apply_deltas(proposal, deltas), cls, float(probs[k][cls]))
        )

    detections = [d for image_id in sorted(raw) for d in nms(raw[image_id], nms_threshold)]
    return detections, truths


def evaluate_detection(
    params: AdaptationParams,
    episode: Episode,
    iou_thresholds: tuple[float, ...] = COCO_THRESHOLDS,
    proposal_jitter: float = 0.1,
    nms_threshold: float = 0.5,
) -> tuple[float, dict[str, float], dict[float, float]]:
    """Returns (mAP over thresholds, per-class AP averaged over thresholds,
    mAP at each threshold)."""
    detections, truths = detect_episode(params, episode, proposal_jitter, nms_threshold)
    classes_with_gt = sorted({g.class_index for g in truths})
    per_class: dict[int, list[float]] = {c: [] for c in classes_with_gt}
    map_by_threshold: dict[float, float] = {}
    for t in iou_thresholds:
        aps = []
        for c in classes_with_gt:
            ap = average_precision(
                [d for d in detections if d.class_index == c],
                [g for g in truths if g.class_index == c],
                t,
            )
            per_class[c].append(ap)
            aps.append(ap)
        map_by_threshold[t] = float(np.mean(aps))
    map_value = float(np.mean(list(map_by_threshold.values())))
    per_class_ap = {episode.class_names[c]: float(np.mean(v)) for c, v in per_class.items()}
    return map_value, per_class_ap, map_by_threshold


def mean_pairwise_prototype_cosine(params: AdaptationParams) -> float:
    """Mean cosine similarity over distinct object-prototype pairs."""
    p = bind_model(params, train=False).prototypes.object_prototypes.data
    n = p.shape[0]
    if n < 2:
        raise ContractError("pairwise similarity needs at least two prototypes")
    s = p @ p.T
    return float((s.sum() - np.trace(s)) / (n * (n - 1)))


def episode_fingerprint(episode: Episode) -> str:
    payload = {
        "dataset_id": episode.pack.dataset_id,
        "n_way": episode.n_way,
        "k_shot": episode.k_shot,
        "seed": episode.spec.seed,
        "classes": episode.class_indices,
        "support": episode.support_indices,
        "background": episode.background_indices,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def config_fingerprint(config: FinetuneConfig, stage: str | None = None) -> str:
    payload = config.as_dict()
    payload["stage"] = stage
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def evaluate_stage(
    episode: Episode,
    config: FinetuneConfig,
    stage: str,
    iou_thresholds: tuple[float, ...] = COCO_THRESHOLDS,
    with_detection: bool = True,
) -> EvalReport:
    if stage not in STAGE_MODULES:
        raise ContractError(f"unknown stage {stage!r}; valid: {list(STAGE_MODULES)}")
    if stage == "frozen":
        # untrained path; single-candidate scoring works better with no finetuning
        params = replace(init_frozen_params(episode, config), top_k=1)
        log = None
    else:
        modules = STAGE_MODULES[stage]
        if MODULE_DP in modules and episode.n_way == 1:
            modules = modules - {MODULE_DP}
        params, log = finetune(episode, replace(config, enabled_modules=modules))

    accuracy = evaluate_classification(params, episode)
    has_boxes = any(
        episode.pack.records[i].box is not None
        for per_image in episode.query_indices.values()
        for i in per_image
    )
    if with_detection and has_boxes:
        map_value, per_class_ap, by_threshold = evaluate_detection(
            params, episode, iou_thresholds, config.proposal_jitter
        )
    else:
        map_value, per_class_ap, by_threshold = None, {}, {}
    return EvalReport(
        stage=stage,
        accuracy=accuracy,
        map_value=map_value,
        per_class_ap=per_class_ap,
        map_by_threshold=by_threshold,
        iou_thresholds=iou_thresholds,
        episode_fingerprint=episode_fingerprint(episode),
        config_fingerprint=config_fingerprint(config, stage),
        train_log=log,
    )


def run_ablation(
    episode: Episode,
    config: FinetuneConfig,
    stages: tuple[str, ...] = STAGES,
    iou_thresholds: tuple[float, ...] = COCO_THRESHOLDS,
    with_detection: bool = True,
    max_workers: int = 1,
) -> list[EvalReport]:
    """One report per stage over the identical episode; only enabled modules vary.

    Stages are independent, so max_workers > 1 may fan them out; results are
    always reduced back in stage order, so worker count never changes output.
    """
    if max_workers > 1 and len(stages) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = [
                pool.submit(evaluate_stage, episode, config, s, iou_thresholds, with_detection)
                for s in stages
            ]
            return [f.result() for f in futures]
    return [evaluate_stage(episode, config, s, iou_thresholds, with_detection) for s in stages]
