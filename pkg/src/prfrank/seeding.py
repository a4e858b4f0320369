"""Single-root-seed RNG streams, one per randomness consumer.

Every source of randomness in the package draws from its own generator so
that, for example, freezing the selector does not shift the data-shuffle or
dropout streams the ranker sees.  Stream identity is a fixed registry, not
a hash of the name, so the mapping can never drift between versions.
"""

from __future__ import annotations

import numpy as np

_COMPONENT_IDS = {
    "init": 1,
    "pretrain_shuffle": 2,
    "shuffle": 3,
    "dropout": 4,
    "policy": 5,
    "gumbel": 6,
    "reward_set": 7,
    "synth": 8,
    "gradcheck": 9,
}


def component_rng(seed: int, component: str) -> np.random.Generator:
    """Generator for one named component under the given root seed."""
    try:
        comp_id = _COMPONENT_IDS[component]
    except KeyError:
        raise KeyError(f"unknown RNG component {component!r}") from None
    return np.random.default_rng(np.random.SeedSequence((int(seed), comp_id)))
