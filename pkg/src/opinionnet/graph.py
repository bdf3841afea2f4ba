"""Directed marked graphs, random generators and Galton-Watson tree laws.

Graphs are stored as compressed in-neighbour lists: the in-edges of vertex
``i`` are ``src[indptr[i]:indptr[i+1]]`` with weights ``weight[...]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _fallback
from .randomness import (Context, InvalidParameterError, check_probabilities,
                         stream_base_array, unit_array, word_array)
from .signals import MediaLaw, VertexAttributes

DEFAULT_NODE_BUDGET = 10_000_000
_ER_CHUNK = 1 << 22


class ValidationError(ValueError):
    pass


class EdgeListParseError(ValueError):
    pass


class BudgetExceededError(RuntimeError):
    pass


def check_cd(c: float, d: float) -> None:
    if not 0.0 <= c < 1.0:
        raise InvalidParameterError(f"c={c} must lie in [0, 1)")
    if not 0.0 < d <= 1.0:
        raise InvalidParameterError(f"d={d} must lie in (0, 1]; stationarity requires d > 0")
    if c + d > 1.0 + 1e-12:
        raise InvalidParameterError(f"c+d={c + d} exceeds 1")


@dataclass(frozen=True, eq=False)
class DirectedGraph:
    n: int
    indptr: np.ndarray
    src: np.ndarray
    weight: np.ndarray
    q: np.ndarray
    s: np.ndarray
    tag: np.ndarray
    c: float
    d: float

    @property
    def m(self) -> int:
        return int(self.src.size)

    @property
    def in_degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def dst(self) -> np.ndarray:
        return np.repeat(np.arange(self.n, dtype=np.int64), self.in_degree)

    @property
    def weight_sums(self) -> np.ndarray:
        return np.bincount(self.dst, weights=self.weight, minlength=self.n)

    @property
    def weighted(self) -> bool:
        return bool(np.any(self.weight != 0.0))

    def attrs(self, i: int) -> VertexAttributes:
        return VertexAttributes(float(self.q[i]), int(self.s[i]), int(self.tag[i]))

    def in_edges(self, i: int) -> list[tuple[int, float]]:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return list(zip(self.src[lo:hi].tolist(), self.weight[lo:hi].tolist()))

    def validate(self) -> None:
        check_cd(self.c, self.d)
        if self.indptr.size != self.n + 1 or self.indptr[0] != 0 or self.indptr[-1] != self.m:
            raise ValidationError("malformed in-adjacency pointer array")
        if self.m and (self.src.min() < 0 or self.src.max() >= self.n):
            raise ValidationError("edge endpoint outside [0, n)")
        if np.any(self.weight < 0):
            raise ValidationError("negative edge weight")
        if np.any(np.abs(self.q) > 1.0) or np.any((self.s != 0) & (self.s != 1)):
            raise ValidationError("vertex attributes out of range")
        if self.weighted:
            sums = self.weight_sums
            bad = np.flatnonzero((self.in_degree > 0) & (np.abs(sums - self.c) > 1e-12))
            if bad.size:
                i = int(bad[0])
                raise ValidationError(f"vertex {i}: in-weights sum to {sums[i]!r}, expected c={self.c!r}")

    def equals(self, other: "DirectedGraph") -> bool:
        return (self.n == other.n and self.c == other.c and self.d == other.d
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("indptr", "src", "weight", "q", "s", "tag")))


def empty_graph(n: int, c: float, d: float, q=None, s=None, tag=None) -> DirectedGraph:
    return DirectedGraph(n, np.zeros(n + 1, np.int64), np.zeros(0, np.int64), np.zeros(0),
                         np.zeros(n) if q is None else np.asarray(q, float),
                         np.zeros(n, np.int8) if s is None else np.asarray(s, np.int8),
                         np.zeros(n, np.int64) if tag is None else np.asarray(tag, np.int64), c, d)


def from_edges(n: int, src, dst, c: float, d: float, weight=None, q=None, s=None, tag=None) -> DirectedGraph:
    """Build a graph from edge arrays; in-edges of a vertex keep their input order."""
    src = np.asarray(src, np.int64)
    dst = np.asarray(dst, np.int64)
    w = np.zeros(src.size) if weight is None else np.asarray(weight, float)
    order = np.argsort(dst, kind="stable")
    indptr = np.zeros(n + 1, np.int64)
    np.cumsum(np.bincount(dst, minlength=n), out=indptr[1:])
    g = empty_graph(n, c, d, q, s, tag)
    return replace(g, indptr=indptr, src=src[order], weight=w[order])


# offspring and mark laws

@dataclass(frozen=True, eq=False)
class OffspringLaw:
    """Distribution over nonnegative integers given by an explicit pmf table."""
    pmf: np.ndarray
    name: str = "explicit"

    def __post_init__(self):
        p = np.asarray(self.pmf, float)
        check_probabilities(list(range(p.size)), p)
        object.__setattr__(self, "pmf", p)

    @staticmethod
    def fixed(n0: int) -> "OffspringLaw":
        p = np.zeros(n0 + 1)
        p[n0] = 1.0
        return OffspringLaw(p, f"fixed({n0})")

    @staticmethod
    def binomial(n: int, p: float, conditioned_positive: bool = False) -> "OffspringLaw":
        from scipy.stats import binom
        pmf = binom.pmf(np.arange(n + 1), n, p)
        name = f"binomial({n},{p!r})"
        if conditioned_positive:
            pmf[0] = 0.0
            name = f"binomialpos({n},{p!r})"
        return OffspringLaw(pmf / pmf.sum(), name)

    @staticmethod
    def poisson_positive(lam: float) -> "OffspringLaw":
        from scipy.stats import poisson
        # the mass beyond lam + 12 sqrt(lam) + 40 is far below double precision
        hi = int(math.ceil(lam + 12.0 * math.sqrt(lam) + 40.0))
        pmf = poisson.pmf(np.arange(hi + 1), lam)
        pmf[0] = 0.0
        return OffspringLaw(pmf / pmf.sum(), f"poissonpos({lam!r})")

    @staticmethod
    def explicit(pmf: Sequence[float]) -> "OffspringLaw":
        return OffspringLaw(np.asarray(pmf, float), "pmf(" + ",".join(repr(float(x)) for x in pmf) + ")")

    @property
    def cum(self) -> np.ndarray:
        c = np.cumsum(self.pmf)
        c[-1] = 1.0
        return c

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.pmf.size)

    def mean(self) -> float:
        return float(np.dot(self.support, self.pmf))

    def prob_positive(self) -> float:
        return float(1.0 - self.pmf[0])

    def mean_inverse_positive(self) -> float:
        """E[1/N; N > 0]."""
        k = self.support[1:]
        return float(np.dot(self.pmf[1:], 1.0 / k)) if k.size else 0.0


@dataclass(frozen=True)
class MarkComponent:
    """One mixture component of a mark law.

    ``offspring`` overrides the tree's offspring law for nodes drawn from this
    component (bots, for instance, have no in-neighbours).
    """
    prob: float
    q_law: MediaLaw
    s: int = 0
    tag: int = 0
    offspring: OffspringLaw | None = None


@dataclass(frozen=True)
class MarkLaw:
    components: tuple

    def __post_init__(self):
        check_probabilities(self.components, [cp.prob for cp in self.components])
        for cp in self.components:
            if cp.q_law.kind == "copyq":
                raise InvalidParameterError("internal opinions cannot use copyq")
            if cp.s not in (0, 1):
                raise InvalidParameterError(f"stubborn flag {cp.s} must be 0 or 1")

    @staticmethod
    def simple(q_law: MediaLaw, s: int = 0, tag: int = 0) -> "MarkLaw":
        return MarkLaw((MarkComponent(1.0, q_law, s, tag),))


def sample_marks(mark_law: MarkLaw, master: int, entities) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Marks for each entity id, keyed by (ATTRS, entity, 0).

    Word 1 picks the mixture component, later words draw q.  Returns q, s,
    tag and the component index.
    """
    entities = np.asarray(entities)
    base = stream_base_array(master, Context.ATTRS, entities, 0)
    cum = np.cumsum([cp.prob for cp in mark_law.components])
    cum[-1] = 1.0
    comp = np.searchsorted(cum, unit_array(word_array(base, 1)), side="right").astype(np.int32)
    comp = np.minimum(comp, len(cum) - 1)
    from .signals import build_law_table
    table = build_law_table([cp.q_law for cp in mark_law.components])
    q = _fallback.sample_laws(table, comp, base, np.zeros(base.shape), counter=np.ones(base.shape, np.uint64))
    s = np.asarray([cp.s for cp in mark_law.components], np.int8)[comp]
    tag = np.asarray([cp.tag for cp in mark_law.components], np.int64)[comp]
    return q, s, tag, comp


# generators

def generate_er_directed(n: int, p: float, attrs_law: MarkLaw | None, master: int,
                         c: float = 0.0, d: float = 1.0) -> DirectedGraph:
    """Directed Erdos-Renyi graph without self-loops, weights left at zero.

    Edge i -> j is present when word ``i+1`` of stream (GRAPH_GEN, j, 0) maps
    below ``p``.
    """
    if n < 1:
        raise InvalidParameterError(f"n={n} must be at least 1")
    if not 0.0 <= p <= 1.0:
        raise InvalidParameterError(f"edge probability p={p} outside [0, 1]")
    rows = max(1, _ER_CHUNK // n)
    srcs, dsts = [], []
    cols = np.arange(1, n + 1, dtype=np.uint64)
    for j0 in range(0, n, rows):
        js = np.arange(j0, min(n, j0 + rows))
        base = stream_base_array(master, Context.GRAPH_GEN, js, 0)
        u = unit_array(word_array(base[:, None], cols[None, :]))
        hit = u < p
        hit[np.arange(js.size), js] = False
        r, i = np.nonzero(hit)
        srcs.append(i.astype(np.int64))
        dsts.append(js[r].astype(np.int64))
    src = np.concatenate(srcs)
    dst = np.concatenate(dsts)
    if attrs_law is None:
        q = s = tag = None
    else:
        q, s, tag, _ = sample_marks(attrs_law, master, np.arange(n))
    return from_edges(n, src, dst, c, d, q=q, s=s, tag=tag)


def overlay_bots(g: DirectedGraph, n_bots: int, p_bot: float, bot_q: float, master: int,
                 bot_tag: int = 0) -> DirectedGraph:
    """Append ``n_bots`` stubborn vertices with edges bot -> regular vertex.

    Edge from bot b to vertex i uses word b+1 of stream (GRAPH_GEN, i, 1).
    Bots get zero in-degree; new edges carry weight 0 until reweighted.
    """
    if n_bots < 0:
        raise InvalidParameterError(f"n_bots={n_bots} must be nonnegative")
    if not 0.0 <= p_bot <= 1.0:
        raise InvalidParameterError(f"p_bot={p_bot} outside [0, 1]")
    if not -1.0 <= bot_q <= 1.0:
        raise InvalidParameterError(f"bot_q={bot_q} outside [-1, 1]")
    if n_bots == 0:
        return g
    n = g.n
    base = stream_base_array(master, Context.GRAPH_GEN, np.arange(n), 1)
    u = unit_array(word_array(base[:, None], np.arange(1, n_bots + 1, dtype=np.uint64)[None, :]))
    i, b = np.nonzero(u < p_bot)
    src = np.concatenate([g.src, n + b.astype(np.int64)])
    dst = np.concatenate([g.dst, i.astype(np.int64)])
    w = np.concatenate([g.weight, np.zeros(b.size)])
    q = np.concatenate([g.q, np.full(n_bots, float(bot_q))])
    s = np.concatenate([g.s, np.ones(n_bots, np.int8)])
    tag = np.concatenate([g.tag, np.full(n_bots, bot_tag, np.int64)])
    return from_edges(n + n_bots, src, dst, g.c, g.d, w, q, s, tag)


def assign_equal_weights(g: DirectedGraph) -> DirectedGraph:
    deg = g.in_degree
    w = np.repeat(np.divide(g.c, deg, out=np.zeros(g.n), where=deg > 0), deg)
    return replace(g, weight=w)


def in_degree_statistics(g: DirectedGraph) -> tuple[float, np.ndarray, float]:
    """Mean in-degree, empirical in-degree pmf and fraction of zero in-degree vertices."""
    deg = g.in_degree
    pmf = np.bincount(deg, minlength=1) / g.n
    return float(deg.mean()), pmf, float(pmf[0])


# edge-list files

def save_edge_list(g: DirectedGraph, path) -> None:
    lines = [f"# directed marked graph: {g.n} vertices, {g.m} in-edges",
             f"n={g.n}", f"c={g.c!r}", f"d={g.d!r}"]
    for i in range(g.n):
        lines.append(f"v {i} q={float(g.q[i])!r} s={int(g.s[i])} tag={int(g.tag[i])}")
    dst = g.dst
    for e in range(g.m):
        lines.append(f"e {int(g.src[e])} {int(dst[e])} {float(g.weight[e])!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_edge_list(path) -> DirectedGraph:
    header: dict[str, float] = {}
    verts: dict[int, tuple[float, int, int]] = {}
    src, dst, w = [], [], []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            if line.startswith("v "):
                parts = line.split()
                kv = dict(p.split("=", 1) for p in parts[2:])
                verts[int(parts[1])] = (float(kv.get("q", 0.0)), int(kv.get("s", 0)), int(kv.get("tag", 0)))
            elif line.startswith("e "):
                _, a, b, x = line.split()
                src.append(int(a))
                dst.append(int(b))
                w.append(float(x))
            elif "=" in line:
                key, val = line.split("=", 1)
                key = key.strip()
                if key not in ("n", "c", "d"):
                    raise ValueError(f"unknown header key {key!r}")
                header[key] = int(val) if key == "n" else float(val)
            else:
                raise ValueError("unrecognised line")
        except ValueError as exc:
            raise EdgeListParseError(f"{path}:{lineno}: {exc}: {raw!r}") from exc
    if "n" not in header:
        raise EdgeListParseError(f"{path}: missing header line n=<int>")
    n = int(header["n"])
    if any(not 0 <= k < n for k in verts) or any(not (0 <= a < n and 0 <= b < n) for a, b in zip(src, dst)):
        raise ValidationError("vertex or edge endpoint outside [0, n)")
    q = np.array([verts.get(i, (0.0, 0, 0))[0] for i in range(n)], float)
    s = np.array([verts.get(i, (0.0, 0, 0))[1] for i in range(n)], np.int8)
    tag = np.array([verts.get(i, (0.0, 0, 0))[2] for i in range(n)], np.int64)
    g = from_edges(n, src, dst, header.get("c", 0.0), header.get("d", 1.0), w, q, s, tag)
    g.validate()
    return g


# Galton-Watson trees

@dataclass(frozen=True)
class GWTreeSpec:
    """Law of a (delayed) marked Galton-Watson tree with equal-split weights c/N."""
    offspring: OffspringLaw
    mark_law: MarkLaw
    c: float
    root_offspring: OffspringLaw | None = None
    root_mark_law: MarkLaw | None = None
    weight_rule: str = "equal-split"

    def __post_init__(self):
        if self.weight_rule != "equal-split":
            raise InvalidParameterError(f"unsupported weight rule {self.weight_rule!r}")
        if not 0.0 <= self.c < 1.0:
            raise InvalidParameterError(f"c={self.c} must lie in [0, 1)")

    @property
    def root_offspring_law(self) -> OffspringLaw:
        return self.root_offspring if self.root_offspring is not None else self.offspring

    @property
    def root_marks(self) -> MarkLaw:
        return self.root_mark_law if self.root_mark_law is not None else self.mark_law

    def expected_size(self, depth: int) -> float:
        m_root = _mean_offspring(self.root_marks, self.root_offspring_law)
        m = _mean_offspring(self.mark_law, self.offspring)
        total, gen = 1.0, 1.0
        for l in range(depth):
            gen *= m_root if l == 0 else m
            total += gen
            if total > 1e300:
                break
        return total


def _mean_offspring(marks: MarkLaw, default: OffspringLaw) -> float:
    return sum(cp.prob * (cp.offspring or default).mean() for cp in marks.components)


@dataclass(frozen=True, eq=False)
class SampledTree:
    """Depth-truncated tree; nodes in breadth-first (lexicographic) order, root first."""
    depth: np.ndarray
    parent: np.ndarray
    label: np.ndarray
    n_children: np.ndarray
    first_child: np.ndarray
    weight: np.ndarray      # C of the edge to the parent (0 for the root)
    pi: np.ndarray
    q: np.ndarray
    s: np.ndarray
    tag: np.ndarray
    law: np.ndarray         # index of the media law resolved from the mark
    max_depth: int
    c: float

    @property
    def size(self) -> int:
        return int(self.depth.size)

    def children(self, i: int) -> np.ndarray:
        if self.depth[i] >= self.max_depth:
            return np.zeros(0, np.int64)
        return np.arange(self.first_child[i], self.first_child[i] + self.n_children[i])

    def child_weights(self, i: int) -> np.ndarray:
        return self.weight[self.children(i)]


def sample_gw_tree(spec: GWTreeSpec, model, depth: int, master: int,
                   node_budget: int = DEFAULT_NODE_BUDGET) -> SampledTree:
    """Sample a tree to ``depth``; node draws are keyed by ancestry labels under ``master``."""
    from .tables import build_tables
    if depth < 0:
        raise InvalidParameterError(f"depth={depth} must be nonnegative")
    if spec.expected_size(depth) > node_budget:
        raise BudgetExceededError(
            f"expected tree size {spec.expected_size(depth):.3g} exceeds node budget {node_budget}")
    tables = build_tables(spec, model, 0.0)
    levels = _fallback.grow_forest(tables, np.asarray([master], np.uint64), depth, node_budget)
    return _forest_to_tree(levels, depth, spec.c)


def _forest_to_tree(levels, depth: int, c: float) -> SampledTree:
    offsets = np.cumsum([0] + [lv.size for lv in levels])
    parts = {k: [] for k in ("depth", "parent", "label", "n", "first", "w", "pi", "q", "s", "tag", "law")}
    for l, lv in enumerate(levels):
        parts["depth"].append(np.full(lv.size, l, np.int64))
        parts["parent"].append(lv.parent + offsets[l - 1] if l else np.full(lv.size, -1, np.int64))
        parts["label"].append(lv.label)
        parts["n"].append(lv.n_children)
        first = np.zeros(lv.size, np.int64)
        if l < depth:
            first = offsets[l + 1] + np.concatenate([[0], np.cumsum(lv.n_children)[:-1]]).astype(np.int64)
        parts["first"].append(first)
        parts["w"].append(lv.weight)
        parts["pi"].append(lv.pi)
        parts["q"].append(lv.q)
        parts["s"].append(lv.s)
        parts["tag"].append(lv.tag)
        parts["law"].append(lv.law)
    cat = {k: np.concatenate(v) for k, v in parts.items()}
    return SampledTree(cat["depth"], cat["parent"], cat["label"], cat["n"], cat["first"], cat["w"],
                       cat["pi"], cat["q"], cat["s"], cat["tag"], cat["law"], depth, c)
