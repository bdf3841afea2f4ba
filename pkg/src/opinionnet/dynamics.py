"""Synchronous opinion updates on a directed graph.

Each step applies
    R_i <- sum_j C_ji R_j + q_i (c - sum_j C_ji) + d Z_i + (1 - c - d) R_i
to every vertex at once, with Z_i drawn from the vertex's media law on the
stream (SIGNAL, i, step).  Opinions stay in [-1, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import backend as _backend
from .graph import DirectedGraph
from .randomness import (Context, InvalidParameterError, replica_master, stream_base,
                         stream_base_array, unit_array, word_array)
from .signals import RandomStream, SignalModel, build_law_table, external_signal
from .tables import memory_coefficient

BOUND_SLACK = 1e-12


class BoundViolationError(AssertionError):
    pass


@dataclass
class OpinionState:
    values: np.ndarray
    step: int = 0

    def copy(self) -> "OpinionState":
        return OpinionState(self.values.copy(), self.step)


@dataclass
class RunReport:
    final: OpinionState
    trajectory: np.ndarray | None     # (steps + 1, len(record)) when recording
    record: np.ndarray | None
    k_used: int
    bound_at_k: float


def contraction_bound(d: float, k: int) -> float:
    """Distance bound (1-d)^k (2/d + 2) between step k and stationarity."""
    return (1.0 - d) ** k * (2.0 / d + 2.0)


def steps_for_tolerance(d: float, epsilon: float) -> int:
    """Smallest k with (1-d)^k (2/d + 2) <= epsilon."""
    if not 0.0 < d <= 1.0:
        raise InvalidParameterError(f"d={d} must lie in (0, 1]")
    if epsilon <= 0:
        raise InvalidParameterError(f"epsilon={epsilon} must be positive")
    if contraction_bound(d, 0) <= epsilon:
        return 0
    if d == 1.0:
        return 1
    k = max(0, math.ceil(math.log(epsilon / (2.0 / d + 2.0)) / math.log(1.0 - d)))
    while k > 0 and contraction_bound(d, k - 1) <= epsilon:
        k -= 1
    while contraction_bound(d, k) > epsilon:
        k += 1
    return k


def initial_state(n: int, init="zero", master: int = 0) -> OpinionState:
    """``init`` is "zero", "pm1" (uniform on {-1, 1}, keyed by (INIT, i, 0)) or an array."""
    if isinstance(init, OpinionState):
        return init.copy()
    if isinstance(init, str):
        if init == "zero":
            return OpinionState(np.zeros(n))
        if init == "pm1":
            u = unit_array(word_array(stream_base_array(master, Context.INIT, np.arange(n), 0), 1))
            return OpinionState(np.where(u < 0.5, -1.0, 1.0))
        raise InvalidParameterError(f"unknown initial law {init!r}")
    vals = np.array(init, float)
    if vals.shape != (n,):
        raise InvalidParameterError(f"initial state has shape {vals.shape}, expected ({n},)")
    if np.any(np.abs(vals) > 1.0):
        raise InvalidParameterError("initial opinions must lie in [-1, 1]")
    return OpinionState(vals)


def _prepare(g: DirectedGraph, model: SignalModel):
    law_idx = model.resolve_index_array(g.q, g.s, g.tag).astype(np.int32)
    qterm = g.q * (g.c - g.weight_sums)
    return law_idx, qterm, build_law_table(model.laws)


def run(g: DirectedGraph, model: SignalModel, master: int, steps: int, init="zero",
        record=None, threads: int = 1, backend: str | None = None) -> RunReport:
    """Advance ``steps`` synchronous updates from ``init``.

    ``record`` lists vertices whose opinions are kept at every step.  Signals
    at step k use streams keyed by the absolute step ``state.step + k``.
    """
    if steps < 0:
        raise InvalidParameterError(f"steps={steps} must be nonnegative")
    g.validate()
    state = initial_state(g.n, init, master)
    law_idx, qterm, laws = _prepare(g, model)
    rec = None if record is None else np.asarray(record, np.int64)
    kern = _backend.get(backend)
    r, traj = kern.graph_sweep(g.indptr, g.src, g.weight, qterm, law_idx, g.q, laws, g.d,
                               memory_coefficient(g.c, g.d), master, state.step, steps,
                               state.values, rec, threads)
    r = np.asarray(r)
    if np.any(np.abs(r) > 1.0 + BOUND_SLACK):
        raise BoundViolationError(f"opinion {np.abs(r).max()!r} left [-1, 1]")
    return RunReport(OpinionState(r, state.step + steps), None if traj is None else np.asarray(traj),
                     rec, steps, contraction_bound(g.d, steps))


def step(g: DirectedGraph, state: OpinionState, model: SignalModel, master: int) -> OpinionState:
    """One update, vertex by vertex in pure Python; the reference for the kernels."""
    b = memory_coefficient(g.c, g.d)
    new = np.empty(g.n)
    wsum = g.weight_sums
    for i in range(g.n):
        attrs = g.attrs(i)
        stream = RandomStream(stream_base(master, Context.SIGNAL, i, state.step))
        w = external_signal(model, attrs, float(wsum[i]), stream, g.c, g.d)
        acc = 0.0
        for j, cw in g.in_edges(i):
            acc += cw * state.values[j]
        new[i] = acc + w + b * state.values[i]
    return OpinionState(new, state.step + 1)


def apply_delta(g: DirectedGraph, state: OpinionState, delta) -> OpinionState:
    """Add ``delta`` and clip to [-1, 1]; for perturbation experiments."""
    return OpinionState(np.clip(state.values + np.asarray(delta, float), -1.0, 1.0), state.step)


def stationary_sample(g: DirectedGraph, model: SignalModel, master: int, epsilon: float = 1e-6,
                      replica: int = 0, init="zero", threads: int = 1,
                      backend: str | None = None) -> RunReport:
    """Opinions after enough steps that the stationary law is within ``epsilon``.

    Replica r runs with master ``replica_master(master, r)`` for signals and
    the initial state.
    """
    k = steps_for_tolerance(g.d, epsilon)
    m = replica_master(master, replica)
    return run(g, model, m, k, init=init, threads=threads, backend=backend)
