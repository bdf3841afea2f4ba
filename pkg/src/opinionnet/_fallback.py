"""Pure numpy versions of the hot kernels.

These mirror ``_kernels.pyx`` draw for draw: same stream keys, same word
counters, same floating point expression order.  Trees are processed level
by level over a forest of independent replicas; the compiled kernels walk
each tree depth first instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .randomness import (Context, base_from_prefix, child_label_array,
                         entity_prefix_array, root_label, stream_base_array, unit_array,
                         word_array)

UNIFORM, DISCRETE, BETASHIFT, CONST, COPYQ = 0, 1, 2, 3, 4

NAME = "numpy"


def _unit(base, ctr):
    return unit_array(word_array(base, ctr))


def _log(x: np.ndarray) -> np.ndarray:
    # libm log, so results match the compiled kernels bit for bit
    return np.fromiter(map(math.log, x.tolist()), float, x.size)


def _gamma(base: np.ndarray, ctr: np.ndarray, shape: float) -> np.ndarray:
    """Marsaglia-Tsang, one stream per element; ``ctr`` is advanced in place."""
    boost = shape < 1.0
    a = shape + 1.0 if boost else shape
    dd = a - 1.0 / 3.0
    cc = 1.0 / np.sqrt(9.0 * dd)
    out = np.empty(base.shape)
    todo = np.arange(base.size)
    one = np.uint64(1)
    while todo.size:
        b = base[todo]
        c0 = ctr[todo]
        u1 = _unit(b, c0 + one)
        u2 = _unit(b, c0 + np.uint64(2))
        x = np.sqrt(-2.0 * _log(u1)) * np.cos(2.0 * np.pi * u2)
        v = 1.0 + cc * x
        pos = v > 0.0
        # rejected with v <= 0: two words used
        ctr[todo[~pos]] += np.uint64(2)
        idx = todo[pos]
        x, v, b = x[pos], v[pos], b[pos]
        v = v * v * v
        u = _unit(b, ctr[idx] + np.uint64(3))
        ctr[idx] += np.uint64(3)
        ok = _log(u) < 0.5 * x * x + dd - dd * v + dd * _log(v)
        out[idx[ok]] = dd * v[ok]
        todo = np.concatenate([todo[~pos], idx[~ok]])
        todo.sort()
    if boost:
        u = _unit(base, ctr + one)
        ctr += one
        e = 1.0 / shape
        out = out * np.fromiter((ui ** e for ui in u.tolist()), float, u.size)
    return out


def sample_laws(table, law_idx, base, q, counter=None) -> np.ndarray:
    """Draw one media value per element from law ``law_idx[i]`` on stream ``base[i]``.

    ``counter`` holds the number of words already consumed on each stream.
    """
    law_idx = np.asarray(law_idx)
    base = np.asarray(base, np.uint64)
    q = np.broadcast_to(np.asarray(q, float), base.shape)
    ctr = np.zeros(base.shape, np.uint64) if counter is None else np.array(counter, np.uint64)
    z = np.empty(base.shape)
    for j in np.unique(law_idx):
        m = law_idx == j
        kind = table.kind[j]
        if kind == UNIFORM:
            lo, hi = table.a[j], table.b[j]
            z[m] = lo + (hi - lo) * _unit(base[m], ctr[m] + np.uint64(1))
        elif kind == DISCRETE:
            lo, hi = table.ptr[j], table.ptr[j + 1]
            u = _unit(base[m], ctr[m] + np.uint64(1))
            k = np.minimum(np.searchsorted(table.cum[lo:hi], u, side="right"), hi - lo - 1)
            z[m] = table.vals[lo:hi][k]
        elif kind == BETASHIFT:
            bm = base[m]
            cm = ctr[m]
            x = _gamma(bm, cm, table.a[j])
            y = _gamma(bm, cm, table.b[j])
            z[m] = -1.0 + 2.0 * (x / (x + y))
        elif kind == CONST:
            z[m] = table.a[j]
        else:
            z[m] = q[m]
    return z


_OPS = [np.greater, np.greater_equal, np.less, np.less_equal, np.equal, np.not_equal]


def resolve_laws(tables, q, s, tag) -> np.ndarray:
    cols = (np.asarray(q, float), np.asarray(s, float), np.asarray(tag, float))
    n_rules = tables.rule_field.size
    idx = np.full(cols[0].shape, n_rules, np.int32)
    open_ = np.ones(cols[0].shape, bool)
    for r in range(n_rules):
        hit = open_ & _OPS[tables.rule_op[r]](cols[tables.rule_field[r]], tables.rule_value[r])
        idx[hit] = r
        open_ &= ~hit
    return idx


# graph dynamics

def graph_sweep(indptr, src, weight, qterm, law_idx, q, laws, d, b, master, k0, steps,
                r0, record, threads=1):
    """Run ``steps`` synchronous updates starting at time ``k0``.

    Returns the final state and, when ``record`` is not None, the trajectory
    of the recorded vertices with shape (steps + 1, len(record)).
    """
    n = indptr.size - 1
    dst = np.repeat(np.arange(n), np.diff(indptr))
    prefix = entity_prefix_array(master, Context.SIGNAL, np.arange(n, dtype=np.uint64))
    r = np.array(r0, float)
    traj = None
    if record is not None:
        traj = np.empty((steps + 1, record.size))
        traj[0] = r[record]
    for t in range(steps):
        z = sample_laws(laws, law_idx, base_from_prefix(prefix, k0 + t), q)
        w = qterm + d * z
        acc = np.bincount(dst, weights=weight * r[src], minlength=n)
        r = acc + w + b * r
        if traj is not None:
            traj[t + 1] = r[record]
    return r, traj


# trees

@dataclass
class Level:
    replica: np.ndarray
    parent: np.ndarray
    label: np.ndarray
    master: np.ndarray
    n_children: np.ndarray
    weight: np.ndarray
    pi: np.ndarray
    q: np.ndarray
    s: np.ndarray
    tag: np.ndarray
    law: np.ndarray

    @property
    def size(self) -> int:
        return int(self.label.size)


def _draw_nodes(tables, comp_range, off_default, master, label):
    first, stop = comp_range
    base = stream_base_array(master, Context.ATTRS, label, 0)
    cum = tables.comp_cum[first:stop]
    comp = first + np.minimum(np.searchsorted(cum, _unit(base, np.uint64(1)), side="right"), stop - first - 1)
    q = sample_laws(tables.laws, tables.comp_qlaw[comp], base, 0.0, np.ones(base.shape, np.uint64))
    s = tables.comp_s[comp]
    tag = tables.comp_tag[comp]
    off = tables.comp_off[comp]
    off = np.where(off < 0, off_default, off)
    u = _unit(stream_base_array(master, Context.TREE, label, 0), np.uint64(1))
    n_children = np.empty(label.shape, np.int64)
    for j in np.unique(off):
        m = off == j
        lo, hi = tables.off_ptr[j], tables.off_ptr[j + 1]
        n_children[m] = np.minimum(np.searchsorted(tables.off_cum[lo:hi], u[m], side="right"), hi - lo - 1)
    law = resolve_laws(tables, q, s, tag)
    return q, s, tag, n_children, law


def grow_forest(tables, masters, depth: int, budget: int = 10**9) -> list[Level]:
    """Sample one tree per master down to ``depth``; nodes in lexicographic order per level."""
    masters = np.asarray(masters, np.uint64)
    r = masters.size
    label = np.full(r, root_label(), np.uint64)
    q, s, tag, nc, law = _draw_nodes(tables, tables.root_comp, tables.root_off, masters, label)
    lv = Level(np.arange(r), np.full(r, -1, np.int64), label, masters, nc, np.zeros(r), np.ones(r),
               q, s, tag, law)
    levels = [lv]
    total = r
    for _ in range(depth):
        nc = lv.n_children
        k = int(nc.sum())
        total += k
        if total > budget:
            from .graph import BudgetExceededError
            raise BudgetExceededError(f"tree population exceeded node budget {budget}")
        parent = np.repeat(np.arange(lv.size), nc)
        start = np.repeat(np.cumsum(nc) - nc, nc)
        j = np.arange(k) - start + 1
        label = child_label_array(lv.label[parent], j.astype(np.uint64))
        master = lv.master[parent]
        w = tables.c / nc[parent]
        q, s, tag, cnc, law = _draw_nodes(tables, tables.node_comp, tables.node_off, master, label)
        lv = Level(lv.replica[parent], parent, label, master, cnc, w, lv.pi[parent] * w, q, s, tag, law)
        levels.append(lv)
    return levels


def _prefix(lv: Level) -> np.ndarray:
    return entity_prefix_array(lv.master, Context.SIGNAL, lv.label)


def _signal(tables, lv: Level, prefix, t: int) -> np.ndarray:
    z = sample_laws(tables.laws, lv.law, base_from_prefix(prefix, t), lv.q)
    wsum = np.where(lv.n_children > 0, tables.c, 0.0)
    return lv.q * (tables.c - wsum) + tables.d * z


def _chunks(count: int, per_replica: float, target: float = 4e6):
    step = int(max(1, min(count, target // max(per_replica, 1.0))))
    for lo in range(0, count, step):
        yield lo, min(count, lo + step)


def tree_series_batch(tables, masters, horizon: int, max_depth: int, a: np.ndarray,
                      tail: float, expected_nodes: float = 1.0, threads: int = 1) -> np.ndarray:
    """Truncated series value at the root for each master.

    Nodes deeper than ``max_depth`` are replaced by the conditional-mean
    ``tail`` coefficient attached to each frontier node with children.
    """
    masters = np.asarray(masters, np.uint64)
    max_depth = min(max_depth, horizon)
    out = np.empty(masters.size)
    for lo, hi in _chunks(masters.size, expected_nodes * (horizon + 1)):
        levels = grow_forest(tables, masters[lo:hi], max_depth)
        acc = np.zeros(hi - lo)
        for l, lv in enumerate(levels):
            prefix = _prefix(lv)
            inner = np.zeros(lv.size)
            for s in range(l, horizon + 1):
                if a[l, s] != 0.0:
                    inner = inner + a[l, s] * _signal(tables, lv, prefix, s)
            contrib = lv.pi * inner
            if l == max_depth and max_depth < horizon:
                contrib = contrib + np.where(lv.n_children > 0, lv.pi * tables.c * tail, 0.0)
            acc = acc + np.bincount(lv.replica, weights=contrib, minlength=hi - lo)
        out[lo:hi] = acc
    return out


def tree_dynamics_batch(tables, masters, steps: int, expected_nodes: float = 1.0,
                        threads: int = 1) -> np.ndarray:
    """Root opinions R^(0..steps) from the zero state on each sampled tree."""
    masters = np.asarray(masters, np.uint64)
    out = np.zeros((masters.size, steps + 1))
    if steps == 0:
        return out
    b = tables.b
    for lo, hi in _chunks(masters.size, expected_nodes * steps):
        levels = grow_forest(tables, masters[lo:hi], steps - 1)
        below = None
        for l in range(steps - 1, -1, -1):
            lv = levels[l]
            horizon = steps - l
            traj = np.zeros((lv.size, horizon + 1))
            prefix = _prefix(lv)
            for t in range(horizon):
                if below is not None:
                    acc = np.bincount(levels[l + 1].parent, weights=levels[l + 1].weight * below[:, t],
                                      minlength=lv.size)
                else:
                    acc = np.zeros(lv.size)
                traj[:, t + 1] = acc + _signal(tables, lv, prefix, t) + b * traj[:, t]
            below = traj
        out[lo:hi] = below
    return out


def tree_level_sums_batch(tables, masters, steps: int, expected_nodes: float = 1.0,
                          threads: int = 1) -> np.ndarray:
    """P[r, l, t] = sum over depth-l nodes of Pi * W^(t), for l + t <= steps - 1."""
    masters = np.asarray(masters, np.uint64)
    out = np.zeros((masters.size, max(steps, 1), max(steps, 1)))
    if steps == 0:
        return out
    for lo, hi in _chunks(masters.size, expected_nodes * steps):
        levels = grow_forest(tables, masters[lo:hi], steps - 1)
        for l, lv in enumerate(levels):
            prefix = _prefix(lv)
            for t in range(steps - l):
                out[lo:hi, l, t] = np.bincount(lv.replica, weights=lv.pi * _signal(tables, lv, prefix, t),
                                               minlength=hi - lo)
    return out
