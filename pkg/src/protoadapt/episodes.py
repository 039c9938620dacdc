"""Episode construction: N-way K-shot support sets, query pools, backgrounds.

An episode fixes the adaptation problem: N classes with exactly K support
instances each, a pool of background instances, and every remaining object
record of the chosen classes as query, grouped by image. Support and query
are disjoint by construction. All sampling is driven by dedicated RNG
streams so an (pack, spec) pair always yields the same episode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InsufficientBackgroundError, InsufficientDataError, ValidationError
from .featurepack import FeaturePack, FeatureRecord
from .rng import STREAM_BACKGROUND, STREAM_SUPPORT, sample_without_replacement, stream


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int
    k_shot: int
    n_background: int
    seed: int
    class_indices: tuple[int, ...] | None = None  # explicit pack-level classes, else lexicographic

    def __post_init__(self):
        if self.n_way < 1:
            raise ValidationError(f"n_way must be >= 1, got {self.n_way}")
        if self.k_shot < 1:
            raise ValidationError(f"k_shot must be >= 1, got {self.k_shot}")
        if self.n_background < 0:
            raise ValidationError(f"n_background must be >= 0, got {self.n_background}")


@dataclass
class Episode:
    """Sampled episode. Labels used downstream are positions in class_indices."""

    spec: EpisodeSpec
    class_indices: list[int]
    class_names: list[str]
    support_indices: list[list[int]]  # N lists of K pack-record indices
    background_indices: list[int]
    query_indices: dict[str, list[int]] = field(default_factory=dict)  # image_id -> pack indices
    pack: FeaturePack = None

    @property
    def n_way(self) -> int:
        return len(self.class_indices)

    @property
    def k_shot(self) -> int:
        return self.spec.k_shot

    def local_label(self, pack_class_index: int) -> int:
        return self.class_indices.index(pack_class_index)

    def support_records(self) -> list[list[FeatureRecord]]:
        return [[self.pack.records[i] for i in row] for row in self.support_indices]

    def background_records(self) -> list[FeatureRecord]:
        return [self.pack.records[i] for i in self.background_indices]

    def query_records(self) -> dict[str, list[FeatureRecord]]:
        return {img: [self.pack.records[i] for i in idx] for img, idx in self.query_indices.items()}


def select_background_indices(pack: FeaturePack, n_background: int, seed: int) -> list[int]:
    candidates = pack.background_indices()
    if n_background > len(candidates):
        raise InsufficientBackgroundError(
            f"requested {n_background} background instances, pack has {len(candidates)}"
        )
    rng = stream(seed, STREAM_BACKGROUND)
    picks = sample_without_replacement(rng, len(candidates), n_background)
    return [candidates[j] for j in picks]


def select_background(pack: FeaturePack, n_background: int, seed: int) -> list[FeatureRecord]:
    return [pack.records[i] for i in select_background_indices(pack, n_background, seed)]


def sample_episode(pack: FeaturePack, spec: EpisodeSpec) -> Episode:
    by_class = pack.object_indices_by_class()

    if spec.class_indices is not None:
        chosen = list(spec.class_indices)
        for c in chosen:
            if not (0 <= c < len(pack.class_names)):
                raise ValidationError(f"class index {c} not in pack (has {len(pack.class_names)} classes)")
        if len(set(chosen)) != len(chosen):
            raise ValidationError("explicit class list contains duplicates")
        if len(chosen) != spec.n_way:
            raise ValidationError(f"explicit class list has {len(chosen)} entries, n_way is {spec.n_way}")
    else:
        eligible = sorted(range(len(pack.class_names)), key=lambda c: (pack.class_names[c], c))
        if spec.n_way > len(eligible):
            raise InsufficientDataError(f"n_way {spec.n_way} exceeds {len(eligible)} classes in pack")
        chosen = eligible[: spec.n_way]

    rng = stream(spec.seed, STREAM_SUPPORT)
    support: list[list[int]] = []
    support_flat: set[int] = set()
    for c in chosen:
        pool = by_class[c]
        # K for support plus at least one record left over for query
        if len(pool) < spec.k_shot + 1:
            raise InsufficientDataError(
                f"class {pack.class_names[c]!r} has {len(pool)} records, needs {spec.k_shot + 1} "
                f"for {spec.k_shot}-shot support with a non-empty query"
            )
        picks = sample_without_replacement(rng, len(pool), spec.k_shot)
        row = [pool[j] for j in picks]
        support.append(row)
        support_flat.update(row)

    background = select_background_indices(pack, spec.n_background, spec.seed)

    chosen_set = set(chosen)
    query: dict[str, list[int]] = {}
    for i, r in enumerate(pack.records):
        if not r.is_object or r.class_index not in chosen_set or i in support_flat:
            continue
        query.setdefault(r.image_id, []).append(i)

    return Episode(
        spec=spec,
        class_indices=chosen,
        class_names=[pack.class_names[c] for c in chosen],
        support_indices=support,
        background_indices=background,
        query_indices=query,
        pack=pack,
    )
