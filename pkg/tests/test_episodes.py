"""Episode sampling: balance, disjointness, determinism, and failure modes."""

import pytest

from protoadapt.episodes import EpisodeSpec, sample_episode, select_background_indices
from protoadapt.errors import (
    InsufficientBackgroundError,
    InsufficientDataError,
    ValidationError,
)

from conftest import tiny_pack


def spec(**kw):
    base = dict(n_way=3, k_shot=2, n_background=4, seed=0)
    base.update(kw)
    return EpisodeSpec(**base)


def test_support_is_balanced_n_by_k(pack):
    ep = sample_episode(pack, spec())
    assert len(ep.support_indices) == 3
    assert all(len(row) == 2 for row in ep.support_indices)
    for c, row in enumerate(ep.support_indices):
        assert all(pack.records[i].class_index == ep.class_indices[c] for i in row)


def test_support_and_query_are_disjoint(pack):
    ep = sample_episode(pack, spec())
    support = {i for row in ep.support_indices for i in row}
    query = {i for idx in ep.query_indices.values() for i in idx}
    assert not support & query


def test_query_covers_every_remaining_object(pack):
    ep = sample_episode(pack, spec())
    support = {i for row in ep.support_indices for i in row}
    query = {i for idx in ep.query_indices.values() for i in idx}
    expected = {
        i
        for i, r in enumerate(pack.records)
        if r.is_object and r.class_index in set(ep.class_indices) and i not in support
    }
    assert query == expected


def test_query_grouped_by_image(pack):
    ep = sample_episode(pack, spec())
    for image_id, indices in ep.query_indices.items():
        assert all(pack.records[i].image_id == image_id for i in indices)


def test_sampling_is_deterministic(pack):
    a = sample_episode(pack, spec())
    b = sample_episode(pack, spec())
    assert a.support_indices == b.support_indices
    assert a.background_indices == b.background_indices
    assert a.query_indices == b.query_indices


def test_seed_changes_support(pack):
    a = sample_episode(pack, spec(seed=0))
    b = sample_episode(pack, spec(seed=1))
    assert a.support_indices != b.support_indices


def test_classes_default_to_lexicographic_name_order():
    pack = tiny_pack(n_classes=3)
    pack.class_names[0], pack.class_names[2] = pack.class_names[2], pack.class_names[0]
    ep = sample_episode(pack, spec(n_way=2))
    # names are now class-2, class-1, class-0 at indices 0, 1, 2
    assert ep.class_names == ["class-0", "class-1"]
    assert ep.class_indices == [2, 1]


def test_explicit_class_selection(pack):
    ep = sample_episode(pack, spec(n_way=2, class_indices=(2, 0)))
    assert ep.class_indices == [2, 0]
    assert ep.local_label(2) == 0
    assert ep.local_label(0) == 1


def test_duplicate_class_selection_rejected(pack):
    with pytest.raises(ValidationError, match="duplicates"):
        sample_episode(pack, spec(n_way=2, class_indices=(1, 1)))


def test_class_selection_length_must_match_n_way(pack):
    with pytest.raises(ValidationError, match="n_way"):
        sample_episode(pack, spec(n_way=3, class_indices=(0, 1)))


def test_class_index_out_of_pack_rejected(pack):
    with pytest.raises(ValidationError, match="not in pack"):
        sample_episode(pack, spec(n_way=1, class_indices=(9,)))


def test_class_needs_k_plus_one_records():
    pack = tiny_pack(n_classes=2, per_class=2)
    with pytest.raises(InsufficientDataError, match="class-0"):
        sample_episode(pack, spec(n_way=2, k_shot=2, n_background=0))


def test_too_many_ways_rejected(pack):
    with pytest.raises(InsufficientDataError, match="n_way"):
        sample_episode(pack, spec(n_way=4))


def test_background_overdraw_rejected(pack):
    with pytest.raises(InsufficientBackgroundError):
        select_background_indices(pack, 99, seed=0)


def test_background_indices_come_from_background_records(pack):
    picks = select_background_indices(pack, 4, seed=0)
    assert len(picks) == len(set(picks)) == 4
    assert all(pack.records[i].role == "background" for i in picks)


def test_spec_validation():
    with pytest.raises(ValidationError):
        EpisodeSpec(n_way=0, k_shot=1, n_background=0, seed=0)
    with pytest.raises(ValidationError):
        EpisodeSpec(n_way=1, k_shot=0, n_background=0, seed=0)
    with pytest.raises(ValidationError):
        EpisodeSpec(n_way=1, k_shot=1, n_background=-1, seed=0)
