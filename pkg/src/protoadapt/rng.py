"""Deterministic random streams.

All sampling in the package draws from numpy's Philox counter-based generator,
keyed by ``SeedSequence((seed, stream_id))``. Philox produces the same bit
stream on every platform, and giving each consumer its own stream id keeps the
streams independent: enabling or disabling one module never perturbs the draws
seen by another.
"""

from __future__ import annotations

import numpy as np

# Stream ids. Never renumber; files and results depend on them.
STREAM_SUPPORT = 0        # class selection + per-class support sampling
STREAM_BACKGROUND = 1     # background record sampling
STREAM_REWEIGHT_INIT = 2  # instance-reweighting MLP / fuse layer init
STREAM_DOMAIN_INIT = 3    # virtual-domain vector init
STREAM_HEAD_INIT = 4      # head parameter init
STREAM_PAIR_CHOICE = 5    # per-epoch domain pair sampling
STREAM_SYNTH = 6          # synthetic benchmark generation
STREAM_PROPOSAL_JITTER = 7  # training proposal-box jitter
STREAM_EVAL_JITTER = 8      # evaluation proposal-box jitter
STREAM_FIXTURE = 9          # gradient-check fixture generation


def stream(seed: int, stream_id: int) -> np.random.Generator:
    """Return the Philox generator for (seed, stream_id)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed), int(stream_id)))))


def sample_without_replacement(rng: np.random.Generator, n: int, k: int) -> list[int]:
    """Draw k distinct indices from range(n) via a partial Fisher-Yates shuffle.

    Spelled out rather than delegating to Generator.choice so the exact
    sequence of generator calls is pinned by this module.
    """
    if k > n:
        raise ValueError(f"cannot draw {k} items from {n}")
    pool = list(range(n))
    for i in range(k):
        j = i + int(rng.integers(0, n - i))
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k]
