"""Seeded, substream-addressable random number streams.

Every stochastic consumer asks for its own stream keyed by ``(seed, tag)``.
The key is a 64-bit mix of the seed and a stable digest of the tag, fed to
numpy's counter-based Philox generator, so a stream's draws never depend on
how many draws another consumer made.
"""

import hashlib
import json

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x):
    """One round of the SplitMix64 finalizer on a Python int."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def tag_digest(tag):
    return int.from_bytes(hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest(), "little")


def mix(seed, tag):
    """Derive a 64-bit substream key from an integer seed and a purpose tag."""
    return splitmix64(splitmix64(int(seed) & _MASK64) ^ tag_digest(str(tag)))


class RngStream:
    """Deterministic random stream for one purpose.

    Attributes:
        key: the 64-bit derived key.
        draws: number of sampling calls served so far.
    """

    def __init__(self, seed, tag=""):
        self.seed = int(seed)
        self.tag = str(tag)
        self.key = mix(self.seed, self.tag)
        self._gen = np.random.Generator(np.random.Philox(key=self.key))
        self.draws = 0

    def child(self, tag):
        """A new independent stream derived from this stream's key."""
        return RngStream(self.key, tag)

    def uniform(self, low=0.0, high=1.0, size=None):
        self.draws += 1
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        self.draws += 1
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        """Integers in ``[low, high)``."""
        self.draws += 1
        return self._gen.integers(low, high, size)

    def random(self, size=None):
        self.draws += 1
        return self._gen.random(size)

    def permutation(self, n):
        self.draws += 1
        return self._gen.permutation(n)

    def choice(self, n, k):
        """``k`` distinct integers from ``range(n)`` in random order."""
        self.draws += 1
        return self._gen.choice(n, size=k, replace=False)

    def seed_u64(self):
        """A fresh 64-bit integer, e.g. to seed a per-item stream."""
        self.draws += 1
        return int(self._gen.integers(0, 2**63 - 1, dtype=np.int64))

    def get_state(self):
        st = self._gen.bit_generator.state
        return {
            "seed": self.seed,
            "tag": self.tag,
            "draws": self.draws,
            "philox": json.loads(json.dumps(st, default=_jsonable)),
        }

    def set_state(self, state):
        if state["seed"] != self.seed or state["tag"] != self.tag:
            raise ValueError(
                f"rng state for ({state['seed']}, {state['tag']!r}) applied to ({self.seed}, {self.tag!r})"
            )
        st = dict(state["philox"])
        st["state"] = {k: np.array(v, dtype=np.uint64) for k, v in st["state"].items()}
        st["buffer"] = np.array(st["buffer"], dtype=np.uint64)
        self._gen.bit_generator.state = st
        self.draws = int(state["draws"])

    @classmethod
    def from_state(cls, state):
        stream = cls(state["seed"], state["tag"])
        stream.set_state(state)
        return stream


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return [int(x) for x in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    raise TypeError(f"not serializable: {type(obj)}")
