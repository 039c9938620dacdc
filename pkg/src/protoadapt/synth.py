"""Synthetic cross-domain benchmark at desk scale.

The generator plants a controlled domain gap: well-separated class clusters
(orthonormal means), a rigid random rotation standing in for the target
domain's feature shift, per-sample Gaussian noise, and a fraction of
corrupted records per class. Corrupted records are displaced along one
shared direction and pulled toward the next class's mean, so frozen mean
prototypes absorb the corruption while a trained model can learn to ignore
the shared direction and downweight the bad instances.

Noise scales are displacement norms, not per-coordinate widths: a noise
vector is drawn as scale * g / sqrt(dim) with g standard normal, so the
expected displacement stays `scale` at any dimension. Corruption strength
has to clear outlier_scale^2 * 1/k_shot > 1 for corrupted queries to flip
toward whichever class absorbed the most corrupted support rows; the
defaults sit well above that threshold.

A second fixture plants a single far outlier inside an otherwise tight
support set, for probing that the reweighting module scores it down. It
crowds more classes than dimensions so no shared linear layer can undo the
outlier's damage to prototype separation; starving the outlier's attention
weight stays the cheapest fix available to the optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .episodes import Episode, EpisodeSpec
from .errors import ValidationError
from .featurepack import FeaturePack, build_pack
from .rng import STREAM_SYNTH, stream


@dataclass(frozen=True)
class BenchmarkSpec:
    n_classes: int = 5
    dim: int = 64
    per_class: int = 25
    n_background: int = 60
    seed: int = 0
    noise: float = 0.35
    outlier_fraction: float = 0.3
    outlier_scale: float = 6.0
    confusion: float = 0.25
    records_per_image: int = 5

    def __post_init__(self):
        if self.n_classes < 1 or self.dim < 2 or self.per_class < 2:
            raise ValidationError("benchmark needs n_classes >= 1, dim >= 2, per_class >= 2")
        if not (0.0 <= self.outlier_fraction <= 1.0):
            raise ValidationError(f"outlier_fraction must be in [0, 1], got {self.outlier_fraction}")
        if self.n_classes > self.dim:
            raise ValidationError("class means are orthonormal; need n_classes <= dim")


def _orthonormal_rows(rng, n: int, dim: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, max(n, 1))))
    # fix the sign convention so the factorization is unique and seed-stable
    q = q * np.sign(np.diag(r))[None, :]
    return q[:, :n].T.copy()


def _unit_orthogonal_to(rng, rows: np.ndarray) -> np.ndarray:
    v = rng.standard_normal(rows.shape[1])
    v -= rows.T @ (rows @ v)
    n = np.linalg.norm(v)
    if n < 1e-9:
        raise ValidationError("degenerate corruption direction; retry with another seed")
    return v / n


def _random_box(rng) -> tuple[float, float, float, float]:
    x0 = float(rng.uniform(0.0, 70.0))
    y0 = float(rng.uniform(0.0, 70.0))
    w = float(rng.uniform(10.0, 30.0))
    h = float(rng.uniform(10.0, 30.0))
    return (x0, y0, x0 + w, y0 + h)


def make_benchmark_pack(spec: BenchmarkSpec = BenchmarkSpec()) -> FeaturePack:
    rng = stream(spec.seed, STREAM_SYNTH)
    means = _orthonormal_rows(rng, spec.n_classes, spec.dim)
    corruption = _unit_orthogonal_to(rng, means)
    rotation = _orthonormal_rows(rng, spec.dim, spec.dim)

    n_outliers = int(round(spec.outlier_fraction * spec.per_class))
    scale = 1.0 / np.sqrt(spec.dim)
    rows: list[np.ndarray] = []
    metadata: list[dict] = []
    image_counter = 0
    for c in range(spec.n_classes):
        for i in range(spec.per_class):
            x = means[c] + spec.noise * scale * rng.standard_normal(spec.dim)
            if i < n_outliers:
                wrong = (c + 1) % spec.n_classes
                x = x + spec.outlier_scale * corruption + spec.confusion * means[wrong]
            rows.append(rotation @ x)
            image_id = f"img-{(image_counter // spec.records_per_image):04d}"
            image_counter += 1
            metadata.append(
                {"role": "object", "class_index": c, "image_id": image_id, "box": list(_random_box(rng))}
            )
    for b in range(spec.n_background):
        rows.append(rotation @ rng.standard_normal(spec.dim))
        metadata.append({"role": "background", "image_id": f"bg-{b:04d}"})

    return build_pack(
        dataset_id=f"synth-benchmark-{spec.seed}",
        class_names=[f"class-{c:02d}" for c in range(spec.n_classes)],
        metadata=metadata,
        matrix=np.stack(rows, axis=0),
    )


def benchmark_episode(spec: BenchmarkSpec, k_shot: int = 5, n_background: int = 30) -> Episode:
    """Sample the canonical episode for a benchmark pack."""
    from .episodes import sample_episode

    pack = make_benchmark_pack(spec)
    return sample_episode(
        pack,
        EpisodeSpec(n_way=spec.n_classes, k_shot=k_shot, n_background=n_background, seed=spec.seed),
    )


def _spread_directions(rng, n: int, dim: int) -> np.ndarray:
    """n unit rows pushed apart by repulsion; works for n > dim unlike QR."""
    x = rng.standard_normal((n, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    for _ in range(300):
        sims = x @ x.T
        np.fill_diagonal(sims, 0.0)
        x += 0.05 * (x * sims.sum(axis=1, keepdims=True) - sims @ x)
        x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x


@dataclass(frozen=True)
class OutlierFixtureSpec:
    n_classes: int = 5
    dim: int = 3
    k_shot: int = 5
    n_query_per_class: int = 10
    n_background: int = 20
    seed: int = 0
    cluster_noise: float = 0.1
    query_noise: float = 0.2
    outlier_lean: float = 1.5

    def __post_init__(self):
        if self.k_shot < 2:
            raise ValidationError("the outlier fixture needs k_shot >= 2")
        if self.n_classes < 2:
            raise ValidationError("the outlier leans toward a neighbor class; need n_classes >= 2")


def planted_outlier_episode(spec: OutlierFixtureSpec = OutlierFixtureSpec()) -> tuple[Episode, int, int]:
    """Episode whose class 0 support holds K-1 tight rows plus one far outlier.

    Returns (episode, outlier class, outlier support slot); the slot indexes
    into the class's support row, so the outlier's attention weight is
    weights[class, slot] after finetuning.

    The fixture lives in a deliberately low dimension with more classes than
    axes, so the class directions compete for the available angular room. The
    outlier leans hard toward the neighbor class (outlier_lean times its
    mean), dragging its class's prototype into the neighbor's territory.
    Restoring separation is impossible for any shared linear map once the
    prototypes outnumber the dimensions, so the separation pressure keeps
    acting on the one remaining lever: the outlier's attention weight.
    """
    rng = stream(spec.seed, STREAM_SYNTH)
    means = _spread_directions(rng, spec.n_classes, spec.dim)
    scale = 1.0 / np.sqrt(spec.dim)

    rows: list[np.ndarray] = []
    metadata: list[dict] = []
    support_indices: list[list[int]] = []
    query_index_list: list[int] = []

    for c in range(spec.n_classes):
        slots = []
        for k in range(spec.k_shot):
            x = means[c] + spec.cluster_noise * scale * rng.standard_normal(spec.dim)
            if c == 0 and k == spec.k_shot - 1:
                x = means[0] + spec.outlier_lean * means[1]
                x = x + spec.cluster_noise * scale * rng.standard_normal(spec.dim)
            slots.append(len(rows))
            rows.append(x)
            metadata.append(
                {
                    "role": "object",
                    "class_index": c,
                    "image_id": f"support-{c:02d}",
                    "box": list(_random_box(rng)),
                }
            )
        support_indices.append(slots)
        for q in range(spec.n_query_per_class):
            query_index_list.append(len(rows))
            rows.append(means[c] + spec.query_noise * scale * rng.standard_normal(spec.dim))
            metadata.append(
                {
                    "role": "object",
                    "class_index": c,
                    "image_id": f"query-{c:02d}-{q // 5}",
                    "box": list(_random_box(rng)),
                }
            )
    background_indices = []
    for b in range(spec.n_background):
        background_indices.append(len(rows))
        rows.append(rng.standard_normal(spec.dim))
        metadata.append({"role": "background", "image_id": f"bg-{b:04d}"})

    pack = build_pack(
        dataset_id=f"synth-outlier-{spec.seed}",
        class_names=[f"class-{c:02d}" for c in range(spec.n_classes)],
        metadata=metadata,
        matrix=np.stack(rows, axis=0),
    )
    query: dict[str, list[int]] = {}
    for i in query_index_list:
        query.setdefault(pack.records[i].image_id, []).append(i)
    episode = Episode(
        spec=EpisodeSpec(
            n_way=spec.n_classes,
            k_shot=spec.k_shot,
            n_background=spec.n_background,
            seed=spec.seed,
            class_indices=tuple(range(spec.n_classes)),
        ),
        class_indices=list(range(spec.n_classes)),
        class_names=list(pack.class_names),
        support_indices=support_indices,
        background_indices=background_indices,
        query_indices=query,
        pack=pack,
    )
    return episode, 0, spec.k_shot - 1
