"""Counter-based random streams.

Every random quantity in the package is a pure function of a 64-bit master
seed and a ``StreamKey`` (context, entity, step).  Nothing depends on the
order in which draws are made, so results do not change with the number of
worker threads.

The word generator is SplitMix64 seeded with a key hash: word ``i`` of a
stream is ``fmix64(base + (i + 1) * GOLDEN)``.  The same arithmetic is
implemented in the compiled kernels and in ``_fallback`` (vectorised numpy).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
LABEL_SALT = 0xD6E8FEB86659FD93
ROOT_LABEL_SEED = 0x5851F42D4C957F2D
INV_2_52 = 1.0 / 4503599627370496.0


class Context(enum.IntEnum):
    GRAPH_GEN = 0
    WEIGHTS = 1
    SIGNAL = 2
    INIT = 3
    REPLICA = 4
    ATTRS = 5
    TREE = 6


class InvalidRangeError(ValueError):
    pass


class InvalidParameterError(ValueError):
    pass


@dataclass(frozen=True)
class MasterSeed:
    seed: int

    def __post_init__(self):
        if not 0 <= int(self.seed) <= MASK64:
            raise InvalidParameterError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


@dataclass(frozen=True)
class StreamKey:
    context: int
    entity_id: int
    step: int


def fmix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def stream_base(master: int, context: int, entity: int, step: int) -> int:
    h = fmix64(master)
    h = fmix64(h + ((context + 1) * GOLDEN))
    h = fmix64(h + (((entity + 1) & MASK64) * GOLDEN))
    return fmix64(h + (((step + 1) & MASK64) * GOLDEN))


def replica_master(master: int, replica: int) -> int:
    """Seed used for everything inside replica ``replica`` of a run."""
    return fmix64(stream_base(master, Context.REPLICA, replica, 0) + GOLDEN)


def root_label() -> int:
    return fmix64(ROOT_LABEL_SEED)


def child_label(parent: int, j: int) -> int:
    """Label of the ``j``-th child (1-based) of a tree node; hashes the ancestry string."""
    return fmix64((parent ^ LABEL_SALT) + j * GOLDEN)


def word_to_unit(w: int) -> float:
    """Map a 64-bit word to the open interval (0, 1)."""
    return ((w >> 12) + 0.5) * INV_2_52


class RandomStream:
    """Stateful view of one counter-based stream.

    Equal ``(master, key)`` pairs always replay the same words.  A stream
    instance is cheap and should not be shared between threads.
    """

    def __init__(self, base: int):
        self.base = base & MASK64
        self.counter = 0

    def next_u64(self) -> int:
        self.counter += 1
        return fmix64(self.base + self.counter * GOLDEN)

    def next_unit(self) -> float:
        return word_to_unit(self.next_u64())

    def next_normal(self) -> float:
        u1 = self.next_unit()
        u2 = self.next_unit()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def words(self, count: int) -> list[int]:
        return [self.next_u64() for _ in range(count)]


def derive_stream(master: MasterSeed | int, key: StreamKey | tuple) -> RandomStream:
    seed = master.seed if isinstance(master, MasterSeed) else int(master)
    if isinstance(key, tuple):
        key = StreamKey(*key)
    return RandomStream(stream_base(seed, int(key.context), int(key.entity_id), int(key.step)))


def sample_uniform(stream: RandomStream, lo: float, hi: float) -> float:
    if lo > hi:
        raise InvalidRangeError(f"lo={lo} exceeds hi={hi}")
    # always consume one word so that draw positions do not depend on the law
    return lo + (hi - lo) * stream.next_unit()


def sample_gamma(stream: RandomStream, shape: float) -> float:
    """Marsaglia-Tsang squeeze method; shapes below one use the u**(1/a) boost."""
    if shape <= 0:
        raise InvalidParameterError(f"gamma shape must be positive, got {shape}")
    boost = shape < 1.0
    a = shape + 1.0 if boost else shape
    dd = a - 1.0 / 3.0
    cc = 1.0 / math.sqrt(9.0 * dd)
    while True:
        x = stream.next_normal()
        v = 1.0 + cc * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = stream.next_unit()
        if math.log(u) < 0.5 * x * x + dd - dd * v + dd * math.log(v):
            g = dd * v
            break
    if boost:
        g *= stream.next_unit() ** (1.0 / shape)
    return g


def sample_beta(stream: RandomStream, alpha: float, beta: float) -> float:
    if alpha <= 0 or beta <= 0:
        raise InvalidParameterError(f"beta shapes must be positive, got ({alpha}, {beta})")
    x = sample_gamma(stream, alpha)
    y = sample_gamma(stream, beta)
    return x / (x + y)


def check_probabilities(values: Sequence[float], probs: Sequence[float]) -> np.ndarray:
    if len(values) != len(probs) or len(values) == 0:
        raise InvalidParameterError(
            f"values and probs must be nonempty with equal lengths ({len(values)} vs {len(probs)})")
    p = np.asarray(probs, dtype=float)
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise InvalidParameterError(f"probabilities must be nonnegative: {list(probs)}")
    if abs(p.sum() - 1.0) > 1e-12:
        raise InvalidParameterError(f"probabilities sum to {p.sum()!r}, not 1")
    cum = np.cumsum(p)
    cum[-1] = 1.0
    return cum


def sample_discrete(stream: RandomStream, values: Sequence[float], probs: Sequence[float]) -> float:
    cum = check_probabilities(values, probs)
    u = stream.next_unit()
    j = int(np.searchsorted(cum, u, side="right"))
    return values[min(j, len(values) - 1)]


# vectorised versions, shared by the numpy fallback and by non-kernel code

_G = np.uint64(GOLDEN)


def fmix64_array(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


def _as_u64(x) -> np.ndarray:
    arr = np.asarray(x)
    if arr.dtype == np.uint64:
        return arr
    if arr.dtype.kind == "i":
        return arr.astype(np.int64).view(np.uint64) if arr.ndim else np.uint64(int(arr) & MASK64)
    return np.asarray(np.vectorize(lambda v: int(v) & MASK64, otypes=[np.uint64])(arr))


def stream_base_array(master, context: int, entity, step) -> np.ndarray:
    """Broadcasting ``stream_base`` over arrays of masters, entities and steps."""
    with np.errstate(over="ignore"):
        m = _as_u64(master)
        e = _as_u64(entity)
        s = _as_u64(step)
        h = fmix64_array(m)
        h = fmix64_array(h + np.uint64(((context + 1) * GOLDEN) & MASK64))
        h = fmix64_array(h + (e + np.uint64(1)) * _G)
        return fmix64_array(h + (s + np.uint64(1)) * _G)


def word_array(base, counter) -> np.ndarray:
    """Word number ``counter`` (1-based) of each stream in ``base``."""
    with np.errstate(over="ignore"):
        return fmix64_array(_as_u64(base) + _as_u64(counter) * _G)


def unit_array(words: np.ndarray) -> np.ndarray:
    return ((words >> np.uint64(12)).astype(np.float64) + 0.5) * INV_2_52


def child_label_array(parent, j) -> np.ndarray:
    with np.errstate(over="ignore"):
        return fmix64_array((_as_u64(parent) ^ np.uint64(LABEL_SALT)) + _as_u64(j) * _G)


def replica_master_array(master: int, replicas) -> np.ndarray:
    with np.errstate(over="ignore"):
        return fmix64_array(stream_base_array(master, Context.REPLICA, replicas, 0) + _G)


def entity_prefix_array(master, context: int, entity) -> np.ndarray:
    """Hash state after mixing in master, context and entity (the step is added later)."""
    with np.errstate(over="ignore"):
        h = fmix64_array(_as_u64(master))
        h = fmix64_array(h + np.uint64(((context + 1) * GOLDEN) & MASK64))
        return fmix64_array(h + (_as_u64(entity) + np.uint64(1)) * _G)


def base_from_prefix(prefix: np.ndarray, step: int) -> np.ndarray:
    with np.errstate(over="ignore"):
        return fmix64_array(prefix + np.uint64(((step + 1) * GOLDEN) & MASK64))
