"""SGD finetuning over the adaptation parameters.

Trainable groups: the detection heads (classification projection and box
regressor), the learnable instance matrix, the reweighting parameters, and
the domain vectors. Any subset can be enabled; disabled groups are bound as
constants and provably never move. Training regions are the support
instances themselves (plus backgrounds), with proposal boxes jittered once
per run so the box regressor has non-zero targets to learn from.

Each epoch is one full-batch gradient step on a fresh tape: bind parameter
leaves, assemble prototypes (reweighted when IR is on, plain means
otherwise), evaluate L_loc + L_cls (+ L_dp when DP is on), backpropagate,
and apply a plain SGD update. Identical inputs replay bit-identically.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tape, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .episodes import Episode
from .errors import ConfigError, NumericError, ShapeError, TrainingError
from .featurepack import Box
from .heads import (
    BACKGROUND,
    HeadParams,
    QueryRegion,
    classification_loss,
    init_head_state,
    localization_loss,
    total_loss,
)
from .prompter import DomainVectors, DpConfig, dp_loss_terms, init_domain_matrix, sample_pair_choice
from .prototypes import (
    LearnableInstances,
    PrototypeSet,
    ReweightParams,
    assemble_prototypes,
    class_attention_weights,
    init_reweight_state,
    mean_prototypes,
    reweight_prototypes,
    stack_episode_instances,
)
from .rng import STREAM_PAIR_CHOICE, STREAM_PROPOSAL_JITTER, stream

MODULE_FT_HEADS = "FT-heads"
MODULE_LIF = "LIF"
MODULE_IR = "IR"
MODULE_DP = "DP"
ALL_MODULES = frozenset({MODULE_FT_HEADS, MODULE_LIF, MODULE_IR, MODULE_DP})

PARAM_GROUPS: dict[str, tuple[str, ...]] = {
    MODULE_FT_HEADS: ("head.cls_w", "head.cls_b", "head.box_w", "head.box_b"),
    MODULE_LIF: ("instances",),
    MODULE_IR: ("reweight.mlp_w", "reweight.mlp_b", "reweight.fuse_w", "reweight.fuse_b"),
    MODULE_DP: ("domains",),
}


@dataclass(frozen=True)
class FinetuneConfig:
    lr: float = 0.002
    epochs: int | None = None  # None resolves to 80 for K=1, 40 otherwise
    alpha: float = 0.7
    tau_proto: float = 2.0
    tau_domain: float = 0.1
    cls_temperature: float = 0.1
    top_k: int | None = None  # None resolves to min(5, N) at scoring time
    n_background: int = 530
    proposal_jitter: float = 0.1
    enabled_modules: frozenset[str] = ALL_MODULES
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError(f"lr must be nonnegative, got {self.lr}")
        if self.epochs is not None and self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        unknown = set(self.enabled_modules) - ALL_MODULES
        if unknown:
            raise ConfigError(f"unknown modules {sorted(unknown)}; valid: {sorted(ALL_MODULES)}")
        if not self.enabled_modules:
            raise ConfigError("enabled_modules must be non-empty (the frozen path runs no finetuning)")

    def resolved_epochs(self, k_shot: int) -> int:
        return self.epochs if self.epochs is not None else (80 if k_shot == 1 else 40)

    def dp_config(self) -> DpConfig:
        return DpConfig(tau_domain=self.tau_domain, tau_proto=self.tau_proto)

    def as_dict(self) -> dict:
        return {
            "lr": self.lr,
            "epochs": self.epochs,
            "alpha": self.alpha,
            "tau_proto": self.tau_proto,
            "tau_domain": self.tau_domain,
            "cls_temperature": self.cls_temperature,
            "top_k": self.top_k,
            "n_background": self.n_background,
            "proposal_jitter": self.proposal_jitter,
            "enabled_modules": sorted(self.enabled_modules),
            "seed": self.seed,
        }


@dataclass
class TrainLog:
    total: list[float] = field(default_factory=list)
    loc: list[float] = field(default_factory=list)
    cls: list[float] = field(default_factory=list)
    domain: list[float] = field(default_factory=list)
    proto: list[float] = field(default_factory=list)
    proto_cls: list[float] = field(default_factory=list)
    wall_time_seconds: float = 0.0

    def epoch_rows(self) -> list[dict]:
        return [
            {
                "epoch": i,
                "total": self.total[i],
                "loc": self.loc[i],
                "cls": self.cls[i],
                "domain": self.domain[i],
                "proto": self.proto[i],
                "proto_cls": self.proto_cls[i],
            }
            for i in range(len(self.total))
        ]


@dataclass
class AdaptationParams:
    """Numpy-side state of one adapted episode plus its static configuration."""

    class_names: list[str]
    n_way: int
    k_shot: int
    n_background: int
    dim: int
    alpha: float
    cls_temperature: float
    top_k: int | None
    tau_domain: float
    tau_proto: float
    enabled_modules: frozenset[str]
    values: dict[str, np.ndarray]

    def copy(self) -> "AdaptationParams":
        return replace(self, values={k: v.copy() for k, v in self.values.items()})


def trainable_keys(enabled_modules: frozenset[str]) -> tuple[str, ...]:
    keys: list[str] = []
    for module in (MODULE_FT_HEADS, MODULE_LIF, MODULE_IR, MODULE_DP):
        if module in enabled_modules:
            keys.extend(PARAM_GROUPS[module])
    return tuple(keys)


def init_adaptation_params(episode: Episode, config: FinetuneConfig) -> AdaptationParams:
    dim = episode.pack.dim
    reweight = init_reweight_state(dim, config.seed)
    head = init_head_state(dim, config.seed)
    values = {
        "instances": stack_episode_instances(episode),
        "reweight.mlp_w": reweight.mlp_w,
        "reweight.mlp_b": reweight.mlp_b,
        "reweight.fuse_w": reweight.fuse_w,
        "reweight.fuse_b": reweight.fuse_b,
        "head.cls_w": head.cls_w,
        "head.cls_b": head.cls_b,
        "head.box_w": head.box_w,
        "head.box_b": head.box_b,
        "domains": init_domain_matrix(episode.n_way, dim, config.dp_config(), config.seed),
    }
    return AdaptationParams(
        class_names=list(episode.class_names),
        n_way=episode.n_way,
        k_shot=episode.k_shot,
        n_background=len(episode.background_indices),
        dim=dim,
        alpha=config.alpha,
        cls_temperature=config.cls_temperature,
        top_k=config.top_k,
        tau_domain=config.tau_domain,
        tau_proto=config.tau_proto,
        enabled_modules=frozenset(config.enabled_modules),
        values=values,
    )


@dataclass
class BoundModel:
    """One forward pass worth of tape-bound structures."""

    tape: Tape
    leaves: dict[str, Tensor]
    instances: LearnableInstances
    reweight: ReweightParams
    head: HeadParams
    domains: DomainVectors
    prototypes: PrototypeSet


def bind_model(params: AdaptationParams, train: bool) -> BoundModel:
    tape = Tape()
    enabled = params.enabled_modules if train else frozenset()
    keys = set(trainable_keys(enabled))
    leaves = {k: tape.leaf(v, requires_grad=k in keys) for k, v in params.values.items()}

    instances = LearnableInstances(
        matrix=leaves["instances"],
        n_way=params.n_way,
        k_shot=params.k_shot,
        n_background=params.n_background,
    )
    reweight = ReweightParams(
        mlp_w=leaves["reweight.mlp_w"],
        mlp_b=leaves["reweight.mlp_b"],
        fuse_w=leaves["reweight.fuse_w"],
        fuse_b=leaves["reweight.fuse_b"],
        alpha=params.alpha,
    )
    head = HeadParams(
        cls_w=leaves["head.cls_w"],
        cls_b=leaves["head.cls_b"],
        box_w=leaves["head.box_w"],
        box_b=leaves["head.box_b"],
        cls_temperature=params.cls_temperature,
        top_k=params.top_k,
    )
    domains = DomainVectors(matrix=leaves["domains"])

    if MODULE_IR in params.enabled_modules:
        object_prototypes = reweight_prototypes(instances, reweight)
    else:
        object_prototypes = mean_prototypes(instances)
    prototypes = assemble_prototypes(object_prototypes, instances, params.class_names)

    return BoundModel(
        tape=tape,
        leaves=leaves,
        instances=instances,
        reweight=reweight,
        head=head,
        domains=domains,
        prototypes=prototypes,
    )


def jitter_box(box: Box, magnitude: float, rng) -> Box:
    """Shift the center by up to magnitude * size and rescale by exp(+-magnitude)."""
    x0, y0, x1, y1 = box
    w, h = x1 - x0, y1 - y0
    dx, dy, dw, dh = rng.uniform(-magnitude, magnitude, size=4)
    cx = (x0 + x1) / 2 + dx * w
    cy = (y0 + y1) / 2 + dy * h
    nw = w * float(np.exp(dw))
    nh = h * float(np.exp(dh))
    return (cx - nw / 2, cy - nh / 2, cx + nw / 2, cy + nh / 2)


def build_training_batch(episode: Episode, proposal_jitter: float, seed: int) -> list[QueryRegion]:
    """Support instances as labeled regions, backgrounds as background regions."""
    rng = stream(seed, STREAM_PROPOSAL_JITTER)
    regions: list[QueryRegion] = []
    for label, row in enumerate(episode.support_indices):
        for i in row:
            record = episode.pack.records[i]
            if record.box is not None:
                proposal = jitter_box(record.box, proposal_jitter, rng)
                regions.append(
                    QueryRegion(record.embedding, proposal_box=proposal, gt_class=label, gt_box=record.box)
                )
            else:
                regions.append(QueryRegion(record.embedding, gt_class=label))
    for i in episode.background_indices:
        regions.append(QueryRegion(episode.pack.records[i].embedding, gt_class=BACKGROUND))
    return regions


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> dict[str, np.ndarray]:
    """Plain p <- p - lr * g; no momentum, no weight decay."""
    updated = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {name!r} {p.shape}")
        updated[name] = p - lr * g
    return updated


def finetune(episode: Episode, config: FinetuneConfig) -> tuple[AdaptationParams, TrainLog]:
    if MODULE_DP in config.enabled_modules and episode.n_way == 1:
        raise ConfigError("DP needs at least two classes; disable it for single-class episodes")

    epochs = config.resolved_epochs(episode.k_shot)
    params = init_adaptation_params(episode, config)
    batch = build_training_batch(episode, config.proposal_jitter, config.seed)
    pair_rng = stream(config.seed, STREAM_PAIR_CHOICE)
    keys = trainable_keys(params.enabled_modules)
    dp_on = MODULE_DP in params.enabled_modules
    dp_config = config.dp_config()

    log = TrainLog()
    started = time.perf_counter()
    for _ in range(epochs):
        pairs = sample_pair_choice(episode.n_way, 2 * episode.n_way, pair_rng) if dp_on else None
        try:
            model = bind_model(params, train=True)
            l_cls = classification_loss(batch, model.prototypes, model.head)
            l_loc = localization_loss(batch, model.prototypes, model.head)
            if dp_on:
                dp_terms = dp_loss_terms(model.domains, model.prototypes, pairs, dp_config, model.head)
                loss = total_loss(l_loc, l_cls, dp_terms.total)
            else:
                dp_terms = None
                loss = total_loss(l_loc, l_cls)
        except NumericError as e:
            log.wall_time_seconds = time.perf_counter() - started
            raise TrainingError(f"training diverged: {e}", log=log) from e

        log.total.append(loss.item())
        log.loc.append(l_loc.item())
        log.cls.append(l_cls.item())
        log.domain.append(dp_terms.domain.item() if dp_terms else 0.0)
        log.proto.append(dp_terms.proto.item() if dp_terms else 0.0)
        log.proto_cls.append(dp_terms.proto_cls.item() if dp_terms else 0.0)

        grads_by_uid = model.tape.backward(loss)
        grads = {k: grads_by_uid[model.leaves[k].uid] for k in keys}
        updated = sgd_step({k: params.values[k] for k in keys}, grads, config.lr)
        params.values.update(updated)

    log.wall_time_seconds = time.perf_counter() - started
    return params, log


def init_frozen_params(episode: Episode, config: FinetuneConfig) -> AdaptationParams:
    """Untrained baseline state: plain mean prototypes, identity projection."""
    params = init_adaptation_params(episode, config)
    return replace(params, enabled_modules=frozenset())


def build_prototypes(params: AdaptationParams) -> PrototypeSet:
    """Inference-time prototype set (no gradients)."""
    return bind_model(params, train=False).prototypes


def compute_attention_weights(params: AdaptationParams) -> np.ndarray:
    """Per-class softmax weights over the K support instances, shape (N, K)."""
    model = bind_model(params, train=False)
    rows = [
        class_attention_weights(model.instances.class_rows(c), model.reweight).data[0]
        for c in range(params.n_way)
    ]
    return np.stack(rows, axis=0)


CHECKPOINT_KIND = "adaptation-params"


def save_adaptation(path, params: AdaptationParams) -> None:
    meta = {
        "kind": CHECKPOINT_KIND,
        "class_names": params.class_names,
        "n_way": params.n_way,
        "k_shot": params.k_shot,
        "n_background": params.n_background,
        "dim": params.dim,
        "alpha": params.alpha,
        "cls_temperature": params.cls_temperature,
        "top_k": params.top_k,
        "tau_domain": params.tau_domain,
        "tau_proto": params.tau_proto,
        "enabled_modules": sorted(params.enabled_modules),
    }
    save_checkpoint(path, params.values, meta)


def load_adaptation(path) -> AdaptationParams:
    values, meta = load_checkpoint(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise ConfigError(f"{path}: checkpoint kind {meta.get('kind')!r} is not {CHECKPOINT_KIND!r}")
    return AdaptationParams(
        class_names=list(meta["class_names"]),
        n_way=int(meta["n_way"]),
        k_shot=int(meta["k_shot"]),
        n_background=int(meta["n_background"]),
        dim=int(meta["dim"]),
        alpha=float(meta["alpha"]),
        cls_temperature=float(meta["cls_temperature"]),
        top_k=None if meta["top_k"] is None else int(meta["top_k"]),
        tau_domain=float(meta["tau_domain"]),
        tau_proto=float(meta["tau_proto"]),
        enabled_modules=frozenset(meta["enabled_modules"]),
        values=values,
    )
