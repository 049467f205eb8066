"""Counter-based random streams keyed by (seed, replication, round, purpose)."""
import numpy as np

PURPOSES = {
    "context": 1,
    "adversary": 2,
    "play": 3,
    "sigma": 4,
    "sigma_tilde": 5,
    "mgr": 6,
    "linexp3": 7,
    "diagnostic": 8,
    "oracle": 9,
    "diagnostic_tilde": 10,
}


def stream(seed, replication, round_, purpose):
    """A fresh Philox generator for one (seed, replication, round, purpose) key.

    Streams for different keys are statistically independent, and a key
    always yields the same stream, so no generator state is shared between
    rounds or purposes.
    """
    tag = PURPOSES[purpose] if isinstance(purpose, str) else int(purpose)
    seq = np.random.SeedSequence([int(seed), int(replication), int(round_), tag])
    return np.random.Generator(np.random.Philox(seq))


class Streams:
    """Stream factory bound to one (seed, replication) pair."""

    def __init__(self, seed, replication=0):
        self.seed = int(seed)
        self.replication = int(replication)

    def get(self, round_, purpose):
        return stream(self.seed, self.replication, round_, purpose)

    def __repr__(self):
        return f"Streams(seed={self.seed}, replication={self.replication})"
