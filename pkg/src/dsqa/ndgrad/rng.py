from __future__ import annotations

import numpy as np


class RngState:
    """Seeded, serializable random stream.

    Backed by numpy's PCG64, whose output is specified bit-for-bit across
    platforms. ``position`` counts draw calls and is informational; the full
    generator state is what :meth:`state_dict` persists.
    """

    def __init__(self, seed: int, position: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.position = 0
        self._gen = np.random.Generator(np.random.PCG64(self.seed))
        for _ in range(position):
            self._gen.random()
            self.position += 1

    def _tick(self) -> np.random.Generator:
        self.position += 1
        return self._gen

    def normal(self, shape) -> np.ndarray:
        return self._tick().standard_normal(shape, dtype=np.float32)

    def uniform(self, shape) -> np.ndarray:
        return self._tick().random(shape, dtype=np.float32)

    def uniform64(self, shape) -> np.ndarray:
        return self._tick().random(shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._tick().integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._tick().permutation(n)

    def bernoulli(self, p: float, shape) -> np.ndarray:
        return self._tick().random(shape) < p

    def gumbel(self, shape) -> np.ndarray:
        # -log(-log(u)), u kept away from {0, 1}
        u = self._tick().random(shape)
        u = np.clip(u, 1e-10, 1.0 - 1e-10)
        return (-np.log(-np.log(u))).astype(np.float32)

    def categorical(self, probs: np.ndarray) -> np.ndarray:
        """One draw per row of ``probs`` (last axis sums to 1)."""
        probs = np.asarray(probs, dtype=np.float64)
        cdf = np.cumsum(probs, axis=-1)
        u = self._tick().random(probs.shape[:-1])[..., None] * cdf[..., -1:]
        return np.minimum((cdf <= u).sum(axis=-1), probs.shape[-1] - 1)

    def spawn(self, tag: int) -> "RngState":
        """Independent child stream keyed by ``tag`` (does not advance self)."""
        seq = np.random.SeedSequence([self.seed, int(tag)])
        return RngState(int(seq.generate_state(1, np.uint64)[0]))

    def state_dict(self) -> dict:
        st = self._gen.bit_generator.state
        return {
            "seed": self.seed,
            "position": self.position,
            "pcg_state": str(st["state"]["state"]),
            "pcg_inc": str(st["state"]["inc"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> "RngState":
        rng = cls(d["seed"])
        rng.position = int(d["position"])
        rng._gen.bit_generator.state = {
            "bit_generator": "PCG64",
            "state": {"state": int(d["pcg_state"]), "inc": int(d["pcg_inc"])},
            "has_uint32": int(d["has_uint32"]),
            "uinteger": int(d["uinteger"]),
        }
        return rng
