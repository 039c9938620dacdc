"""Virtual-domain perturbation: learnable domain vectors and their losses.

Domains are 2N small random vectors added directly onto prototypes. Three
losses shape them: a diversity term pushing domain vectors apart (InfoNCE
over raw dot products, each row its own positive), a consistency term tying
the two perturbed copies of each prototype together against cross-class
impostors, and a classification term demanding the head still recognize a
perturbed prototype. Similarities here are raw dot products, not cosines;
prototypes arrive normalized but domains are free vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    add,
    concat_rows,
    cross_entropy_with_logits,
    gather_rows,
    matmul,
    scale,
    slice_rows,
    transpose,
)
from .errors import ContractError, ShapeError, ValidationError
from .heads import HeadParams, region_logits
from .prototypes import PrototypeSet
from .rng import STREAM_DOMAIN_INIT, stream


@dataclass(frozen=True)
class DpConfig:
    tau_domain: float = 0.1
    tau_proto: float = 2.0
    n_dom_per_class: int = 2  # N_dom = 2N

    def __post_init__(self):
        if self.tau_domain <= 0 or self.tau_proto <= 0:
            raise ValidationError("temperatures must be positive")
        if self.n_dom_per_class < 1:
            raise ValidationError("need at least one domain vector per class")


@dataclass
class DomainVectors:
    matrix: Tensor  # (N_dom, D), requires_grad

    @property
    def n_dom(self) -> int:
        return self.matrix.shape[0]


def init_domain_matrix(n_way: int, dim: int, config: DpConfig, seed: int) -> np.ndarray:
    """Small Gaussian rows (std 0.02) so early perturbations barely move unit prototypes."""
    if n_way < 1:
        raise ValidationError(f"n_way must be >= 1, got {n_way}")
    rng = stream(seed, STREAM_DOMAIN_INIT)
    return 0.02 * rng.standard_normal((config.n_dom_per_class * n_way, dim))


def init_domains(n_way: int, dim: int, config: DpConfig, seed: int, tape: Tape) -> DomainVectors:
    return DomainVectors(matrix=tape.leaf(init_domain_matrix(n_way, dim, config, seed)))


def perturb(prototype: Tensor, domain: Tensor) -> Tensor:
    if prototype.shape != domain.shape:
        raise ShapeError(f"perturb shape mismatch: {prototype.shape} vs {domain.shape}")
    return add(prototype, domain)


def sample_pair_choice(n_way: int, n_dom: int, rng) -> list[tuple[int, int]]:
    """Per class, two distinct domain indices (k_i, m_i), uniform."""
    if n_dom < 2:
        raise ContractError(f"pair sampling needs at least 2 domains, got {n_dom}")
    pairs = []
    for _ in range(n_way):
        k = int(rng.integers(n_dom))
        m = int(rng.integers(n_dom - 1))
        if m >= k:
            m += 1
        pairs.append((k, m))
    return pairs


def domain_diversity_loss(domains: DomainVectors, tau: float) -> Tensor:
    """Mean over rows of -log softmax of the self dot product among all dot products."""
    if tau <= 0:
        raise ValidationError(f"tau must be positive, got {tau}")
    m = domains.matrix
    logits = scale(matmul(m, transpose(m)), 1.0 / tau)
    return cross_entropy_with_logits(logits, np.arange(m.shape[0]))


def prototype_consistency_loss(
    prototypes: Tensor,
    domains: DomainVectors,
    pair_choice: list[tuple[int, int]],
    tau: float,
    diagnostics: dict | None = None,
) -> Tensor:
    """Perturbed copies of the same prototype attract, cross-class pairs repel.

    Row i compares anchor p_i + d_{k_i} against candidates p_j + d_{m_i};
    the positive is j = i. Returns 0 for a single class (the softmax is
    over one candidate), flagged in diagnostics.
    """
    if tau <= 0:
        raise ValidationError(f"tau must be positive, got {tau}")
    n = prototypes.shape[0]
    if len(pair_choice) != n:
        raise ShapeError(f"{len(pair_choice)} domain pairs for {n} classes")
    for k, m in pair_choice:
        if k == m:
            raise ContractError(f"pair choice ({k}, {m}) must use two distinct domains")
    if diagnostics is not None and n == 1:
        diagnostics["proto_loss_degenerate"] = True

    anchors = add(prototypes, gather_rows(domains.matrix, [k for k, _ in pair_choice]))
    rows = []
    for i, (_, m) in enumerate(pair_choice):
        candidates = add(prototypes, gather_rows(domains.matrix, [m] * n))
        rows.append(matmul(slice_rows(anchors, i, i + 1), transpose(candidates)))
    logits = scale(concat_rows(rows), 1.0 / tau)
    return cross_entropy_with_logits(logits, np.arange(n))


def perturbed_classification_loss(
    protos: PrototypeSet,
    domains: DomainVectors,
    pair_choice: list[tuple[int, int]],
    head: HeadParams,
) -> Tensor:
    """Each perturbed prototype must still classify as its own class.

    Both domains of each class's pair perturb that class's prototype; the
    head scores the result against the unperturbed set (no renormalization
    of the perturbed copies; the head's cosine handles scale).
    """
    n = protos.n_way
    if len(pair_choice) != n:
        raise ShapeError(f"{len(pair_choice)} domain pairs for {n} classes")
    indices = [i for i in range(n) for _ in range(2)]
    domain_idx = [d for k, m in pair_choice for d in (k, m)]
    perturbed = add(
        gather_rows(protos.object_prototypes, indices),
        gather_rows(domains.matrix, domain_idx),
    )
    logits = region_logits(perturbed, protos, head)
    return cross_entropy_with_logits(logits, np.asarray(indices))


@dataclass
class DpLossTerms:
    domain: Tensor
    proto: Tensor
    proto_cls: Tensor
    total: Tensor


def dp_loss_terms(
    domains: DomainVectors,
    protos: PrototypeSet,
    pair_choice: list[tuple[int, int]],
    config: DpConfig,
    head: HeadParams,
    diagnostics: dict | None = None,
) -> DpLossTerms:
    l_domain = domain_diversity_loss(domains, config.tau_domain)
    l_proto = prototype_consistency_loss(
        protos.object_prototypes, domains, pair_choice, config.tau_proto, diagnostics
    )
    l_proto_cls = perturbed_classification_loss(protos, domains, pair_choice, head)
    return DpLossTerms(
        domain=l_domain,
        proto=l_proto,
        proto_cls=l_proto_cls,
        total=add(add(l_domain, l_proto), l_proto_cls),
    )


def dp_loss(
    domains: DomainVectors,
    protos: PrototypeSet,
    pair_choice: list[tuple[int, int]],
    config: DpConfig,
    head: HeadParams,
) -> Tensor:
    return dp_loss_terms(domains, protos, pair_choice, config, head).total
