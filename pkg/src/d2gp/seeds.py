"""Counter-based derivation of purpose-specific seeds from one root seed."""

from __future__ import annotations

import numpy as np

# fixed registry: adding purposes at the end keeps old runs reproducible
PURPOSES = ("data", "noise_student", "noise_teacher", "init", "shuffle",
            "mask", "split", "denoiser")


def derive_seed(root_seed, purpose):
    """Deterministic 63-bit seed for a named purpose."""
    idx = PURPOSES.index(purpose)
    ss = np.random.SeedSequence(entropy=int(root_seed), spawn_key=(idx,))
    state = ss.generate_state(2, dtype=np.uint64)
    return int(state[0] ^ (state[1] >> 1)) & ((1 << 63) - 1)
