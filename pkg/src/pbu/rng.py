"""SplitMix64 stream with Box-Muller Gaussians.

Every random draw in the package goes through :class:`Rng` so that a seed
fully determines an experiment, independent of numpy's global state.
"""

import numpy as np

_GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def derive_seed(seed, *tags):
    """Hash ``seed`` and integer ``tags`` into an independent 64-bit seed."""
    state = int(seed) & _MASK
    for tag in tags:
        state = Rng(state ^ (int(tag) & _MASK)).next_u64()
    return state


class Rng:
    def __init__(self, seed):
        self.state = int(seed) & _MASK

    def u64(self, n):
        """Next ``n`` raw outputs as a uint64 array."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * np.uint64(_GAMMA)
            out = _mix(states)
        self.state = (self.state + n * _GAMMA) & _MASK
        return out

    def next_u64(self):
        return int(self.u64(1)[0])

    def uniform(self, n):
        """``n`` doubles in [0, 1) built from the top 53 bits."""
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n, mean=0.0, std=1.0):
        pairs = (n + 1) // 2
        raw = self.u64(2 * pairs) >> np.uint64(11)
        # u1 in (0, 1] keeps the log finite
        u1 = (raw[0::2].astype(np.float64) + 1.0) * 2.0**-53
        u2 = raw[1::2].astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return mean + std * z[:n]

    def below(self, k):
        """Uniform integer in [0, k) by multiply-shift."""
        return (self.next_u64() * k) >> 64

    def permutation(self, n):
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = list(range(n))
        if n < 2:
            return np.array(perm, dtype=np.int64)
        draws = self.u64(n - 1).tolist()
        for t, i in enumerate(range(n - 1, 0, -1)):
            j = (draws[t] * (i + 1)) >> 64
            perm[i], perm[j] = perm[j], perm[i]
        return np.array(perm, dtype=np.int64)
