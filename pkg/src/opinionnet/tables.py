"""Flat lookup tables handed to the compiled and numpy kernels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signals import LawTable, MediaLaw, SignalModel, build_law_table, rule_arrays

MEMORY_SNAP = 1e-12


def memory_coefficient(c: float, d: float) -> float:
    """1 - c - d, snapped to zero when c + d equals one up to rounding."""
    b = 1.0 - c - d
    return 0.0 if abs(b) < MEMORY_SNAP else b


@dataclass(frozen=True, eq=False)
class KernelTables:
    laws: LawTable            # media laws (rule laws, then default) followed by mark q-laws
    n_media: int
    rule_field: np.ndarray
    rule_op: np.ndarray
    rule_value: np.ndarray
    comp_cum: np.ndarray      # cumulative probabilities, restarting at each group
    comp_qlaw: np.ndarray
    comp_s: np.ndarray
    comp_tag: np.ndarray
    comp_off: np.ndarray      # offspring law override, -1 for none
    root_comp: tuple          # (first, stop) component range for the root
    node_comp: tuple
    off_ptr: np.ndarray
    off_cum: np.ndarray
    root_off: int
    node_off: int
    c: float
    d: float
    b: float


def build_tables(spec, model: SignalModel | None, d: float) -> KernelTables:
    """Tables for a tree law ``spec`` (may be None for graph-only use) and signal model."""
    model = model if model is not None else SignalModel(MediaLaw.const(0.0))
    media = model.laws
    fields, ops, values = rule_arrays(model)
    qlaws, cum, qidx, ss, tags, offs = [], [], [], [], [], []
    off_laws: list = []

    def off_index(law) -> int:
        for j, existing in enumerate(off_laws):
            if existing is law:
                return j
        off_laws.append(law)
        return len(off_laws) - 1

    ranges = []
    if spec is not None:
        root_off = off_index(spec.root_offspring_law)
        node_off = off_index(spec.offspring)
        for marks in (spec.root_marks, spec.mark_law):
            start = len(cum)
            acc = 0.0
            for cp in marks.components:
                acc += cp.prob
                cum.append(acc)
                qlaws.append(cp.q_law)
                qidx.append(len(media) + len(qlaws) - 1)
                ss.append(cp.s)
                tags.append(cp.tag)
                offs.append(-1 if cp.offspring is None else off_index(cp.offspring))
            cum[-1] = 1.0
            ranges.append((start, len(cum)))
        c = spec.c
    else:
        root_off = node_off = -1
        ranges = [(0, 0), (0, 0)]
        c = 0.0
    ptr = [0]
    ocum = []
    for law in off_laws:
        ocum.extend(law.cum.tolist())
        ptr.append(len(ocum))
    return KernelTables(
        build_law_table(list(media) + qlaws), len(media), fields, ops, values,
        np.asarray(cum, float), np.asarray(qidx, np.int32), np.asarray(ss, np.int8),
        np.asarray(tags, np.int64), np.asarray(offs, np.int32), ranges[0], ranges[1],
        np.asarray(ptr, np.int64), np.asarray(ocum, float), root_off, node_off,
        float(c), float(d), memory_coefficient(c, d))
