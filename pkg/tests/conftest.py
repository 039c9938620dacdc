"""Shared fixture builders for the test suite."""

import numpy as np
import pytest

from protoadapt.episodes import EpisodeSpec, sample_episode
from protoadapt.featurepack import build_pack


def tiny_pack(n_classes=3, per_class=4, n_background=5, dim=8, seed=0, with_boxes=True):
    """Small well-separated pack: one orthogonal axis per class plus noise."""
    rng = np.random.default_rng(seed)
    rows = []
    metadata = []
    for c in range(n_classes):
        for i in range(per_class):
            x = np.zeros(dim)
            x[c] = 1.0
            x += 0.05 * rng.standard_normal(dim)
            rows.append(x)
            meta = {"role": "object", "class_index": c, "image_id": f"img-{c}-{i // 2}"}
            if with_boxes:
                x0, y0 = rng.uniform(0, 50, size=2)
                meta["box"] = [float(x0), float(y0), float(x0 + 10), float(y0 + 10)]
            metadata.append(meta)
    for b in range(n_background):
        rows.append(rng.standard_normal(dim))
        metadata.append({"role": "background", "image_id": f"bg-{b}"})
    return build_pack(
        dataset_id=f"tiny-{seed}",
        class_names=[f"class-{c}" for c in range(n_classes)],
        metadata=metadata,
        matrix=np.stack(rows),
    )


@pytest.fixture
def pack():
    return tiny_pack()


@pytest.fixture
def episode(pack):
    return sample_episode(pack, EpisodeSpec(n_way=3, k_shot=2, n_background=4, seed=0))
