"""Deterministic, forkable random streams.

Every random draw in the package comes from an :class:`RngStream`. The
generator is a counter-based SplitMix64, fully specified below so that a
port in any language reproduces the streams bit for bit:

* Stream identity: ``base = fnv1a64(le64(seed) ++ utf8(label))`` where
  ``le64`` is the 8-byte little-endian encoding of ``seed mod 2**64`` and
  ``fnv1a64`` is the 64-bit FNV-1a hash (offset basis
  ``0xcbf29ce484222325``, prime ``0x100000001b3``).
* Draw ``i`` (the counter starts at 0 and is incremented before each
  draw, so the first draw has ``i == 1``) is
  ``mix64((base + i * 0x9E3779B97F4A7C15) mod 2**64)`` where ``mix64`` is
  the SplitMix64 finalizer.
* Unit-interval doubles use the top 53 bits: ``(u >> 11) * 2**-53``.
* Bounded integers reduce with ``u mod n``; the modulo bias is below
  ``n / 2**64`` and irrelevant at the sizes used here.
* ``fork(label)`` derives an independent child with
  ``child_base = fnv1a64(le64(parent_base) ++ utf8(label))``. Forking
  never consumes draws from the parent.

Streams are single-owner mutable state: never share one across
concurrent tasks, fork instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def mix64(z: int) -> int:
    """SplitMix64 finalizer."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _stream_base(seed: int, label: str) -> int:
    return fnv1a64((seed & _MASK64).to_bytes(8, "little") + label.encode("utf-8"))


@dataclass
class RngStream:
    """A named, counter-based random stream.

    Identical ``(seed, label)`` pairs yield identical sequences; distinct
    labels yield statistically independent streams.
    """

    seed: int
    label: str
    counter: int = 0
    _base: int = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._base = _stream_base(self.seed, self.label)

    def fork(self, label: str) -> "RngStream":
        """Derive an independent child stream without consuming draws."""
        child = RngStream(seed=self._base, label=label, counter=0)
        return child

    def next_u64(self) -> int:
        self.counter += 1
        return mix64((self._base + self.counter * _GOLDEN) & _MASK64)

    def uniform(self) -> float:
        """Double in [0, 1)."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform_range(self, low: float, high: float) -> float:
        return low + (high - low) * self.uniform()

    def randint(self, n: int) -> int:
        """Integer in [0, n)."""
        if n <= 0:
            raise ValueError(f"randint bound must be positive, got {n}")
        return self.next_u64() % n

    def u64_array(self, n: int) -> np.ndarray:
        """Vectorized block of the next ``n`` raw draws.

        Produces exactly the same values as ``n`` calls to
        :meth:`next_u64`, in order.
        """
        ks = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = (np.uint64(self._base) + ks * np.uint64(_GOLDEN)).astype(np.uint64)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            return z ^ (z >> np.uint64(31))

    def uniform_array(self, n: int) -> np.ndarray:
        """Vectorized block of ``n`` doubles in [0, 1), matching :meth:`uniform`."""
        return (self.u64_array(n) >> np.uint64(11)) * 2.0**-53

    def choice_weighted(self, weights: np.ndarray) -> int:
        """Index sampled from a normalized weight vector (inverse CDF scan)."""
        u = self.uniform()
        acc = 0.0
        for i, w in enumerate(weights):
            acc += float(w)
            if u < acc:
                return i
        return len(weights) - 1

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of range(n), high index first."""
        out = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randint(i + 1)
            out[i], out[j] = out[j], out[i]
        return out

    def sample_without_replacement(self, n: int, k: int, exclude: int | None = None) -> list[int]:
        """k distinct integers from [0, n), optionally excluding one value.

        Uses rejection on duplicates over shifted draws; deterministic for
        a given stream state.
        """
        pool = n if exclude is None else n - 1
        if k > pool:
            raise ValueError(f"cannot draw {k} distinct values from a pool of {pool}")
        chosen: list[int] = []
        seen = set()
        while len(chosen) < k:
            j = self.randint(pool)
            if exclude is not None and j >= exclude:
                j += 1
            if j in seen:
                continue
            seen.add(j)
            chosen.append(j)
        return chosen


def rng_fork(seed: int, label: str) -> RngStream:
    """Create the stream identified by ``(seed, label)``."""
    return RngStream(seed=seed, label=label)
