"""Opinions on the limiting Galton-Watson tree.

Two families of tools live here:

* the series sampler for the root opinion,
  R* = sum_s sum_l sum_{|j|=l} Pi_j a(l,s) W_j^(s), with a(l,s) = C(s,l)(1-c-d)^(s-l);
* closed-form moments: the no-memory formulas (c+d = 1), their per-group
  conditional versions, the general mean/variance engine, the exact
  finite-horizon moments from the zero state, and the memory/no-memory
  variance comparison.

All formulas take a ``MomentInputs`` record of scalar tree statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import backend as _backend
from .graph import (BudgetExceededError, DEFAULT_NODE_BUDGET, GWTreeSpec, MarkLaw,
                    OffspringLaw, check_cd)
from .randomness import InvalidParameterError, replica_master_array, root_label
from .signals import MediaLaw, Predicate, SignalModel, VertexAttributes
from .tables import build_tables, memory_coefficient


class UnsupportedSpecError(ValueError):
    pass


class DomainError(ValueError):
    pass


class DivergentVarianceError(ValueError):
    pass


# series coefficients

def coefficient_a(l: int, s: int, c: float, d: float) -> float:
    """a(l,s) = C(s,l) (1-c-d)^(s-l); log-space once the binomial gets large."""
    if l < 0 or s < 0 or l > s:
        raise InvalidParameterError(f"coefficient a({l},{s}) needs 0 <= l <= s")
    b = memory_coefficient(c, d)
    if l == s:
        return 1.0
    if b == 0.0:
        return 0.0
    if s <= 60:
        return math.comb(s, l) * b ** (s - l)
    return math.exp(math.lgamma(s + 1) - math.lgamma(l + 1) - math.lgamma(s - l + 1) + (s - l) * math.log(b))


def coefficient_table(size: int, c: float, d: float) -> np.ndarray:
    """Square array with a[l, s] for 0 <= l <= s < size and zeros below the diagonal."""
    a = np.zeros((size, size))
    for s in range(size):
        for l in range(s + 1):
            a[l, s] = coefficient_a(l, s, c, d)
    return a


# moment inputs

@dataclass(frozen=True)
class GroupStats:
    """Root statistics conditional on a group of root marks."""
    prob: float
    mean_Z: float
    var_Z: float
    mean_sum_c2: float
    mean_condvar_Z: float = 0.0


@dataclass(frozen=True)
class MomentInputs:
    """Scalar tree statistics feeding every closed-form moment formula.

    Node quantities (suffix 1) refer to a non-root node, ``*_root`` and
    ``*_star`` to the root.  Y is the conditional mean and V the conditional
    variance of a signal given the node mark; SC is the node's in-weight sum.
    """
    c: float
    d: float
    rho1: float
    rho1_star: float
    rho2: float
    rho2_star: float
    mean_W1: float
    var_W1: float
    mean_W_root: float
    var_W_root: float
    mean_V1: float
    var_Y1: float
    cov_SC_Y1: float
    var_SC: float
    mean_V_root: float
    var_Y_root: float
    cov_SC_Y_root: float
    var_SC_root: float
    p_zero: float = 0.0
    p_zero_root: float = 0.0
    groups: dict = field(default_factory=dict)
    stderr: dict = field(default_factory=dict)
    method: str = "analytic"

    def __post_init__(self):
        check_cd(self.c, self.d)
        eps = 1e-12
        if not (-eps <= self.rho2 <= self.rho1 + eps <= self.c + 2 * eps):
            raise InvalidParameterError(
                f"need 0 <= rho2 <= rho1 <= c, got rho2={self.rho2}, rho1={self.rho1}, c={self.c}")
        if not (-eps <= self.rho2_star <= self.rho1_star + eps <= self.c + 2 * eps):
            raise InvalidParameterError(
                f"need 0 <= rho2* <= rho1* <= c, got rho2*={self.rho2_star}, rho1*={self.rho1_star}")
        for name in ("var_W1", "var_W_root", "mean_V1", "var_Y1", "var_SC", "mean_V_root",
                     "var_Y_root", "var_SC_root"):
            if getattr(self, name) < -eps:
                raise InvalidParameterError(f"{name}={getattr(self, name)} is negative")
        for cov, va, vb in (("cov_SC_Y1", "var_SC", "var_Y1"), ("cov_SC_Y_root", "var_SC_root", "var_Y_root")):
            if abs(getattr(self, cov)) > math.sqrt(max(getattr(self, va), 0) * max(getattr(self, vb), 0)) + 1e-9:
                raise InvalidParameterError(f"{cov} violates the Cauchy-Schwarz bound")

    @staticmethod
    def from_signal_stats(c: float, d: float, rho2: float, rho2_star: float,
                          mean_Z1: float, var_mean_Z1: float, mean_var_Z1: float,
                          mean_Z_root: float, var_mean_Z_root: float, mean_var_Z_root: float) -> "MomentInputs":
        """Inputs for trees without zero in-degree, where W = d Z.

        ``var_mean_Z`` is Var(E[Z|mark]) and ``mean_var_Z`` is E[Var(Z|mark)].
        """
        d2 = d * d
        return MomentInputs(
            c=c, d=d, rho1=c, rho1_star=c, rho2=rho2, rho2_star=rho2_star,
            mean_W1=d * mean_Z1, var_W1=d2 * (var_mean_Z1 + mean_var_Z1),
            mean_W_root=d * mean_Z_root, var_W_root=d2 * (var_mean_Z_root + mean_var_Z_root),
            mean_V1=d2 * mean_var_Z1, var_Y1=d2 * var_mean_Z1, cov_SC_Y1=0.0, var_SC=0.0,
            mean_V_root=d2 * mean_var_Z_root, var_Y_root=d2 * var_mean_Z_root,
            cov_SC_Y_root=0.0, var_SC_root=0.0)

    @property
    def s(self) -> float:
        return self.c + self.d

    @property
    def b(self) -> float:
        return memory_coefficient(self.c, self.d)


def rescaled_no_memory(inputs: MomentInputs) -> MomentInputs:
    """Inputs of the recursion with weights C/(c+d) and signals W/(c+d)."""
    s = inputs.s
    f1, f2 = 1.0 / s, 1.0 / (s * s)
    return replace(
        inputs, c=inputs.c / s, d=inputs.d / s,
        rho1=inputs.rho1 * f1, rho1_star=inputs.rho1_star * f1,
        rho2=inputs.rho2 * f2, rho2_star=inputs.rho2_star * f2,
        mean_W1=inputs.mean_W1 * f1, var_W1=inputs.var_W1 * f2,
        mean_W_root=inputs.mean_W_root * f1, var_W_root=inputs.var_W_root * f2,
        mean_V1=inputs.mean_V1 * f2, var_Y1=inputs.var_Y1 * f2, cov_SC_Y1=inputs.cov_SC_Y1 * f2,
        var_SC=inputs.var_SC * f2, mean_V_root=inputs.mean_V_root * f2,
        var_Y_root=inputs.var_Y_root * f2, cov_SC_Y_root=inputs.cov_SC_Y_root * f2,
        var_SC_root=inputs.var_SC_root * f2, groups={}, stderr={}, method=inputs.method + "+rescaled")


# analytic statistics by enumerating mark atoms

@dataclass
class _Atom:
    prob: float
    q_mean: float
    q_var: float
    s: int
    tag: int
    law: int
    positive: bool
    inv_n: float     # E[1/N | atom] when positive


def _q_segments(law: MediaLaw, cuts: Sequence[float]):
    """(prob, mean, var, representative q) pieces of an internal-opinion law."""
    if law.kind == "const":
        z = law.params[0]
        return [(1.0, z, 0.0, z)]
    if law.kind == "twopoint":
        return [(p, v, 0.0, v) for v, p in zip(law.values, law.probs) if p > 0]
    if law.kind == "uniform":
        lo, hi = law.params
        if lo == hi:
            return [(1.0, lo, 0.0, lo)]
        pts = [lo] + sorted({x for x in cuts if lo < x < hi}) + [hi]
        out = []
        for x0, x1 in zip(pts[:-1], pts[1:]):
            out.append(((x1 - x0) / (hi - lo), 0.5 * (x0 + x1), (x1 - x0) ** 2 / 12.0, 0.5 * (x0 + x1)))
        return out
    if law.kind == "betashift":
        if any(-1.0 < x < 1.0 for x in cuts):
            raise UnsupportedSpecError(
                "analytic mode cannot split a betashift internal-opinion law by a q threshold; "
                "use monte-carlo mode")
        m = law.mean()
        return [(1.0, m, law.variance(), m)]
    raise UnsupportedSpecError(f"internal-opinion law {law.kind!r} is not supported")


def _atoms(marks: MarkLaw, default_off: OffspringLaw, model: SignalModel, cuts) -> list[_Atom]:
    out = []
    for cp in marks.components:
        if cp.prob <= 0:
            continue
        off = cp.offspring or default_off
        p0 = float(off.pmf[0])
        inv = off.mean_inverse_positive() / (1.0 - p0) if p0 < 1.0 else 0.0
        for pq, m, v, rep in _q_segments(cp.q_law, cuts):
            law = model.resolve_index(VertexAttributes(float(rep), cp.s, cp.tag))
            if p0 > 0:
                out.append(_Atom(cp.prob * pq * p0, m, v, cp.s, cp.tag, law, False, 0.0))
            if p0 < 1:
                out.append(_Atom(cp.prob * pq * (1 - p0), m, v, cp.s, cp.tag, law, True, inv))
    return out


def _side_stats(atoms: list[_Atom], model: SignalModel, c: float, d: float) -> dict:
    laws = model.laws
    acc = {k: 0.0 for k in ("p", "sc", "sc2", "sumc2", "y", "y2", "scy", "v", "z", "z2", "cvz", "p0")}
    for at in atoms:
        law = laws[at.law]
        sc = c if at.positive else 0.0
        if law.kind == "copyq":
            alpha, beta = (c - sc) + d, 0.0
            ez, ez2, cvz = at.q_mean, at.q_var + at.q_mean ** 2, 0.0
        else:
            alpha, beta = c - sc, d * law.mean()
            ez, cvz = law.mean(), law.variance()
            ez2 = cvz + ez * ez
        ey = alpha * at.q_mean + beta
        ey2 = ey * ey + alpha * alpha * at.q_var
        p = at.prob
        acc["p"] += p
        acc["sc"] += p * sc
        acc["sc2"] += p * sc * sc
        acc["sumc2"] += p * (c * c * at.inv_n if at.positive else 0.0)
        acc["y"] += p * ey
        acc["y2"] += p * ey2
        acc["scy"] += p * sc * ey
        acc["v"] += p * d * d * cvz
        acc["z"] += p * ez
        acc["z2"] += p * ez2
        acc["cvz"] += p * cvz
        acc["p0"] += 0.0 if at.positive else p
    tot = acc["p"]
    out = {k: v / tot for k, v in acc.items()}
    out["var_y"] = max(out["y2"] - out["y"] ** 2, 0.0)
    out["var_sc"] = max(out["sc2"] - out["sc"] ** 2, 0.0)
    out["cov"] = out["scy"] - out["sc"] * out["y"]
    out["var_z"] = max(out["z2"] - out["z"] ** 2, 0.0)
    out["prob"] = tot
    return out


def _group_stats(atoms, model, c, d, groups: Sequence[Predicate]) -> dict:
    assigned: dict[str, list] = {}
    for at in atoms:
        attrs = VertexAttributes(float(np.clip(at.q_mean, -1, 1)), at.s, at.tag)
        key = "other"
        for pred in groups:
            if pred.test(attrs):
                key = pred.describe()
                break
        assigned.setdefault(key, []).append(at)
    out = {}
    for key, ats in list(assigned.items()) + [("all", atoms)]:
        st = _side_stats(ats, model, c, d)
        out[key] = GroupStats(st["prob"], st["z"], st["var_z"], st["sumc2"], st["cvz"])
    return out


def _inputs_from_stats(node: dict, root: dict, c: float, d: float, groups: dict, method: str,
                       stderr: dict | None = None) -> MomentInputs:
    return MomentInputs(
        c=c, d=d, rho1=node["sc"], rho1_star=root["sc"], rho2=node["sumc2"], rho2_star=root["sumc2"],
        mean_W1=node["y"], var_W1=node["var_y"] + node["v"], mean_W_root=root["y"],
        var_W_root=root["var_y"] + root["v"], mean_V1=node["v"], var_Y1=node["var_y"],
        cov_SC_Y1=node["cov"], var_SC=node["var_sc"], mean_V_root=root["v"],
        var_Y_root=root["var_y"], cov_SC_Y_root=root["cov"], var_SC_root=root["var_sc"],
        p_zero=node["p0"], p_zero_root=root["p0"], groups=groups, stderr=stderr or {}, method=method)


def moment_inputs(spec: GWTreeSpec, model: SignalModel, d: float, mode: str = "analytic",
                  n: int = 100_000, master: int = 0,
                  group_by: Sequence[str | Predicate] | None = None) -> MomentInputs:
    """Tree statistics for ``spec`` under signal ``model`` and media weight ``d``.

    ``mode`` is "analytic" (exact finite sums over mark atoms and offspring
    pmfs) or "monte-carlo" (``n`` one-generation samples, with standard
    errors in ``stderr``).  ``group_by`` lists root groups for the
    conditional formulas; by default the exposure-rule predicates.
    """
    c = spec.c
    check_cd(c, d)
    preds = [p if isinstance(p, Predicate) else Predicate.parse(p) for p in
             (group_by if group_by is not None else [p for p, _ in model.rules])]
    cuts = [p.value for p in preds if p.field == "q"] + [p.value for p, _ in model.rules if p.field == "q"]
    if mode == "analytic":
        node_atoms = _atoms(spec.mark_law, spec.offspring, model, cuts)
        root_atoms = _atoms(spec.root_marks, spec.root_offspring_law, model, cuts)
        node = _side_stats(node_atoms, model, c, d)
        root = _side_stats(root_atoms, model, c, d)
        groups = _group_stats(root_atoms, model, c, d, preds)
        return _inputs_from_stats(node, root, c, d, groups, "analytic")
    if mode in ("monte-carlo", "montecarlo", "mc"):
        return _moment_inputs_mc(spec, model, d, n, master, preds)
    raise InvalidParameterError(f"unknown moment-input mode {mode!r}")


def _moment_inputs_mc(spec, model, d, n, master, preds) -> MomentInputs:
    from ._fallback import _draw_nodes
    from .randomness import child_label
    c = spec.c
    tables = build_tables(spec, model, d)
    masters = replica_master_array(master, np.arange(n))
    laws = model.laws
    sides = {}
    for side, comp, off, label in (("root", tables.root_comp, tables.root_off, root_label()),
                                   ("node", tables.node_comp, tables.node_off, child_label(root_label(), 1))):
        labels = np.full(n, label, np.uint64)
        q, s, tag, nc, law = _draw_nodes(tables, comp, off, masters, labels)
        mz = np.empty(n)
        vz = np.empty(n)
        copy = np.zeros(n, bool)
        for j, lw in enumerate(laws):
            m = law == j
            if lw.kind == "copyq":
                mz[m], vz[m], copy[m] = q[m], 0.0, True
            else:
                mz[m], vz[m] = lw.mean(), lw.variance()
        sc = np.where(nc > 0, c, 0.0)
        sumc2 = np.where(nc > 0, c * c / np.maximum(nc, 1), 0.0)
        y = q * (c - sc) + d * mz
        v = d * d * vz
        sides[side] = dict(q=q, s=s, tag=tag, sc=sc, sumc2=sumc2, y=y, v=v, z=mz, cvz=vz)

    def stats(x):
        st = {"sc": x["sc"].mean(), "sumc2": x["sumc2"].mean(), "y": x["y"].mean(), "v": x["v"].mean(),
              "var_y": x["y"].var(), "var_sc": x["sc"].var(),
              "cov": float(np.mean((x["sc"] - x["sc"].mean()) * (x["y"] - x["y"].mean()))),
              "p0": float(np.mean(x["sc"] == 0.0)), "z": x["z"].mean(),
              "var_z": (x["cvz"] + x["z"] ** 2).mean() - x["z"].mean() ** 2, "cvz": x["cvz"].mean()}
        se = {"rho1": x["sc"].std() / math.sqrt(n), "rho2": x["sumc2"].std() / math.sqrt(n),
              "mean_W": x["y"].std() / math.sqrt(n), "mean_V": x["v"].std() / math.sqrt(n),
              "var_Y": ((x["y"] - x["y"].mean()) ** 2).std() / math.sqrt(n),
              "var_SC": ((x["sc"] - x["sc"].mean()) ** 2).std() / math.sqrt(n)}
        return st, se

    node, se_node = stats(sides["node"])
    root, se_root = stats(sides["root"])
    r = sides["root"]
    groups = {}
    key = np.full(n, "other", dtype=object)
    undecided = np.ones(n, bool)
    for pred in preds:
        hit = undecided & pred.test_array(r["q"], r["s"], r["tag"])
        key[hit] = pred.describe()
        undecided &= ~hit
    for name in list(dict.fromkeys(key.tolist())) + ["all"]:
        m = np.ones(n, bool) if name == "all" else key == name
        z2 = (r["cvz"][m] + r["z"][m] ** 2).mean()
        groups[name] = GroupStats(float(m.mean()), float(r["z"][m].mean()), float(z2 - r["z"][m].mean() ** 2),
                                  float(r["sumc2"][m].mean()), float(r["cvz"][m].mean()))
    stderr = {f"{k}1": v for k, v in se_node.items()}
    stderr.update({f"{k}_root": v for k, v in se_root.items()})
    return _inputs_from_stats(node, root, c, d, groups, f"monte-carlo({n})", stderr)


# reports

@dataclass
class MomentReport:
    mean_root: float
    var_root: float
    mean_node: float
    var_node: float
    conditional: dict = field(default_factory=dict)   # group -> (mean, variance)
    memory: tuple | None = None                        # (var_memory, var_no_memory)
    method: str = ""

    def rows(self, method: str | None = None) -> list[tuple]:
        """CSV rows (quantity, group, value, stderr_or_na, method)."""
        m = method or self.method
        out = [("mean_root", "all", self.mean_root, "na", m), ("var_root", "all", self.var_root, "na", m),
               ("mean_node", "all", self.mean_node, "na", m), ("var_node", "all", self.var_node, "na", m)]
        for g, (mu, var) in self.conditional.items():
            out.append(("cond_mean_root", g, mu, "na", m))
            out.append(("cond_var_root", g, var, "na", m))
        if self.memory is not None:
            out.append(("var_memory", "all", self.memory[0], "na", m))
            out.append(("var_no_memory", "all", self.memory[1], "na", m))
        return out


def _require_no_memory(inputs: MomentInputs) -> None:
    if abs(inputs.c + inputs.d - 1.0) > 1e-12:
        raise DomainError(f"no-memory formulas need c+d=1, got c+d={inputs.c + inputs.d!r}; "
                          "use mean_var_general")
    if inputs.p_zero > 0 or inputs.p_zero_root > 0 or abs(inputs.rho1 - inputs.c) > 1e-12 \
            or abs(inputs.rho1_star - inputs.c) > 1e-12:
        raise DomainError("no-memory formulas need every node to have at least one in-neighbour; "
                          "use mean_var_general")


def mean_var_no_memory(inputs: MomentInputs) -> MomentReport:
    """Mean and variance for c+d = 1 and no zero in-degree, where W = d Z."""
    _require_no_memory(inputs)
    c, d = inputs.c, inputs.d
    ez_root, ez1 = inputs.mean_W_root / d, inputs.mean_W1 / d
    vz_root, vz1 = inputs.var_W_root / d ** 2, inputs.var_W1 / d ** 2
    var_node = d * d / (1.0 - inputs.rho2) * vz1
    return MomentReport(
        mean_root=d * ez_root + c * ez1,
        var_root=d * d * vz_root + inputs.rho2_star * d * d / (1.0 - inputs.rho2) * vz1,
        mean_node=ez1, var_node=var_node, method="no-memory")


def conditional_mean_var(inputs: MomentInputs, root_group: str) -> tuple[float, float]:
    """Mean and variance of R* given the root group (c+d = 1, no zero in-degree).

    The squared root weights are replaced by their group-conditional mean.
    """
    _require_no_memory(inputs)
    if root_group not in inputs.groups:
        raise InvalidParameterError(f"unknown group {root_group!r}; known: {sorted(inputs.groups)}")
    g = inputs.groups[root_group]
    c, d = inputs.c, inputs.d
    ez1 = inputs.mean_W1 / d
    vz1 = inputs.var_W1 / d ** 2
    mean = d * g.mean_Z + c * ez1
    var = d * d * g.var_Z + d * d / (1.0 - inputs.rho2) * g.mean_sum_c2 * vz1
    return mean, var


# the geometric-T expectation

def _log_binom(n: float, k: float) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def shifted_g_sum(rho2: float, c: float, d: float, shift: int, tol: float = 1e-12,
                  max_terms: int = 1_000_000) -> float:
    """sum_{t>=0} rho2^t g(t + shift), with g(l) = sum_m C(l+m, m)^2 (1-c-d)^(2m).

    Since g(l) = p_l / (c+d)^(2(l+1)) with p_l in (0,1),
    E[(c+d)^(-2(T+1+shift)) p_(T+shift)] = (1 - rho2) * shifted_g_sum(...).
    Both truncations carry explicit tail bounds that together stay below ``tol``.
    """
    s = c + d
    b = memory_coefficient(c, d)
    r = rho2 / (s * s)
    if r >= 1.0:
        raise DivergentVarianceError(f"rho2={rho2} >= (c+d)^2={s * s}: the variance is infinite")
    log_b2 = 2.0 * math.log(b) if b > 0 else -math.inf
    total = 0.0
    for t in range(max_terms):
        # remaining outer terms are bounded using g(l) <= (c+d)^(-2(l+1))
        if t > 0:
            tail = math.exp(-2 * (shift + 1) * math.log(s) + t * math.log(r)) / (1.0 - r) if r > 0 else 0.0
            if tail <= 0.5 * tol:
                break
        if t > 0 and rho2 == 0.0:
            break
        weight_log = t * math.log(rho2) if t > 0 else 0.0
        # inner truncations share the other half of the budget
        total += _g_weighted(t + shift, weight_log, log_b2, 0.5 * tol * 0.5 ** min(t + 1, 1000) + 1e-300)
    return total


def _g_weighted(l: int, weight_log: float, log_b2: float, tol: float) -> float:
    """exp(weight_log) * sum_m C(l+m, m)^2 b^(2m), summed until the geometric tail is below ``tol``."""
    if log_b2 == -math.inf:
        return math.exp(weight_log)
    total = 0.0
    m = 0
    while True:
        term = math.exp(weight_log + 2.0 * _log_binom(l + m, m) + m * log_b2)
        total += term
        ratio = ((l + m + 2) / (m + 2)) ** 2 * math.exp(log_b2)
        nxt = term * ((l + m + 1) / (m + 1)) ** 2 * math.exp(log_b2)
        if ratio < 1.0 and nxt / (1.0 - ratio) <= tol:
            return total
        m += 1
        if m > 10_000_000:
            raise RuntimeError("inner series failed to converge")


def geometric_p_expectation(rho2: float, c: float, d: float, shift: int = 1, tol: float = 1e-12) -> float:
    """E[(c+d)^(-2(T+1+shift)) p_(T+shift)] with T ~ Geometric(1 - rho2) on {0, 1, ...}."""
    return (1.0 - rho2) * shifted_g_sum(rho2, c, d, shift, tol)


# general engine

def mean_var_general(inputs: MomentInputs, tol: float = 1e-12) -> MomentReport:
    """Mean and variance of the root and node opinions for any c+d <= 1."""
    if tol <= 0:
        raise InvalidParameterError("tol must be positive")
    c, d = inputs.c, inputs.d
    s = c + d
    s2 = s * s
    r1, r1s, r2, r2s = inputs.rho1, inputs.rho1_star, inputs.rho2, inputs.rho2_star
    if r2 >= s2:
        raise DivergentVarianceError(f"rho2={r2} >= (c+d)^2={s2}: the variance is infinite")
    ew = inputs.mean_W1
    b = memory_coefficient(c, d)
    mean_node = ew / (s - r1)
    mean_root = inputs.mean_W_root / s + r1s / ((s - r1) * s) * ew
    e_t1 = geometric_p_expectation(r2, c, d, 1, tol)
    e_t0 = geometric_p_expectation(r2, c, d, 0, tol)
    var_root = (inputs.var_SC_root * ew ** 2 / (s2 * (s - r1) ** 2)
                + inputs.var_Y_root / s2
                + 2.0 * inputs.cov_SC_Y_root * ew / (s2 * (s - r1))
                + inputs.mean_V_root / (1.0 - b * b)
                + r2s * inputs.var_SC * ew ** 2 / (s2 * (s - r1) ** 2 * (s2 - r2))
                + r2s * inputs.mean_V1 / (1.0 - r2) * e_t1
                + r2s * inputs.var_Y1 / (s2 * (s2 - r2))
                + 2.0 * r2s * inputs.cov_SC_Y1 * ew / (s2 * (s - r1) * (s2 - r2)))
    var_node = (inputs.var_SC * ew ** 2 / ((s - r1) ** 2 * (s2 - r2))
                + inputs.mean_V1 / (1.0 - r2) * e_t0
                + inputs.var_Y1 / (s2 - r2)
                + 2.0 * inputs.cov_SC_Y1 * ew / ((s - r1) * (s2 - r2)))
    return MomentReport(mean_root, var_root, mean_node, var_node, method="general")


def node_series_variance(inputs: MomentInputs, offset: int, tol: float = 1e-12) -> float:
    """Variance of a non-root subtree series whose coefficients are shifted by ``offset`` levels.

    Equals sum_j rho2^j B(offset + j) with B the per-level variance of the
    finite-horizon recursion taken to infinite horizon.
    """
    s = inputs.s
    s2 = s * s
    mu = inputs.mean_W1 / (s - inputs.rho1)
    sigma = inputs.var_Y1 + mu * mu * inputs.var_SC + 2.0 * mu * inputs.cov_SC_Y1
    g = shifted_g_sum(inputs.rho2, inputs.c, inputs.d, offset, tol)
    return sigma * s ** (-2 * offset) / (s2 - inputs.rho2) + inputs.mean_V1 * g


def variance_deficit(inputs: MomentInputs, max_depth: int) -> float:
    """Variance removed by replacing everything below ``max_depth`` with its conditional mean."""
    return inputs.rho2_star * inputs.rho2 ** max_depth * node_series_variance(inputs, max_depth + 1)


def choose_max_depth(inputs: MomentInputs, var_tol: float, limit: int = 200) -> int:
    """Smallest depth cap whose variance deficit is at most ``var_tol``."""
    for L in range(limit + 1):
        if variance_deficit(inputs, L) <= var_tol:
            return L
    return limit


def truncation_bound(d: float, horizon: int) -> float:
    """Sup-norm distance between the horizon-S partial sum and the full series."""
    return 2.0 * (1.0 - d) ** (horizon + 1) / d


# finite horizon

def _finite_sums(a: np.ndarray, K: int, m: int, rho1: float) -> tuple[float, float, float]:
    """S_{K,m}, U_{K,m}, T_{K,m} from the coefficient table ``a``."""
    u_terms = a[m, m:m + K + 1]
    U = float(u_terms.sum())
    T = float((u_terms ** 2).sum())
    if K == 0:
        return 0.0, U, T
    block = a[m + 1:m + K + 1, m + 1:m + K + 1]
    w = rho1 ** np.arange(K)
    S = float(w @ block.sum(axis=1))
    return S, U, T


def finite_horizon_moments(inputs: MomentInputs, k: int) -> tuple[float, float, float, float]:
    """Mean and variance of R^(k+1) at the root and at a non-root node, from the zero state."""
    if k < 0:
        raise InvalidParameterError(f"k={k} must be nonnegative")
    a = coefficient_table(k + 1, inputs.c, inputs.d)
    ew = inputs.mean_W1
    r2, r2s = inputs.rho2, inputs.rho2_star

    def block(m: int, root: bool) -> float:
        S, U, T = _finite_sums(a, k - m, m, inputs.rho1)
        if root:
            return (ew ** 2 * inputs.var_SC_root * S * S + U * U * inputs.var_Y_root
                    + 2.0 * ew * S * U * inputs.cov_SC_Y_root + inputs.mean_V_root * T)
        return (ew ** 2 * inputs.var_SC * S * S + U * U * inputs.var_Y1
                + 2.0 * ew * S * U * inputs.cov_SC_Y1 + inputs.mean_V1 * T)

    S0, U0, _ = _finite_sums(a, k, 0, inputs.rho1)
    mean_root = ew * inputs.rho1_star * S0 + inputs.mean_W_root * U0
    mean_node = ew * (inputs.rho1 * S0 + U0)
    var_root = block(0, True)
    if k >= 1:
        var_root += r2s * r2 ** (k - 1) * inputs.var_W1
        var_root += r2s * sum(r2 ** (m - 1) * block(m, False) for m in range(1, k))
    var_node = r2 ** k * inputs.var_W1 + sum(r2 ** m * block(m, False) for m in range(k))
    return mean_root, var_root, mean_node, var_node


# memory comparison

@dataclass(frozen=True)
class MemoryComparison:
    var_memory: float
    var_no_memory: float
    inequality_holds: bool


def memory_comparison(inputs: MomentInputs, tol: float = 1e-12) -> MemoryComparison:
    """Variance with memory (c+d < 1) against the rescaled no-memory recursion."""
    c, d = inputs.c, inputs.d
    s = c + d
    if not s < 1.0:
        raise DomainError(f"the memory side needs c+d < 1, got {s!r}")
    if inputs.p_zero > 0 or inputs.p_zero_root > 0:
        raise DomainError("memory comparison needs every node to have at least one in-neighbour")
    s2 = s * s
    r2, r2s = inputs.rho2, inputs.rho2_star
    if r2 >= s2:
        raise DivergentVarianceError(f"rho2={r2} >= (c+d)^2={s2}: the variance is infinite")
    d2 = d * d
    vz_root, vz1 = inputs.var_W_root / d2, inputs.var_W1 / d2
    cv_root, cv1 = inputs.mean_V_root / d2, inputs.mean_V1 / d2
    e_t1 = geometric_p_expectation(r2, c, d, 1, tol)
    no_mem = d2 / s2 * vz_root + d2 * r2s / (s2 * (s2 - r2)) * vz1
    mem = (no_mem + 2.0 * d2 * (s - 1.0) / (s2 * (2.0 - s)) * cv_root
           + d2 * r2s * (e_t1 / (1.0 - r2) - 1.0 / (s2 * (s2 - r2))) * cv1)
    return MemoryComparison(mem, no_mem, mem <= no_mem * (1.0 + 1e-12))


# series sampling

def _tail_coefficient(inputs: MomentInputs, a: np.ndarray, horizon: int, max_depth: int) -> float:
    if max_depth >= horizon:
        return 0.0
    A = a.sum(axis=1)   # A_l = sum_{s=l}^{S} a(l, s)
    ls = np.arange(max_depth + 1, horizon + 1)
    return float(inputs.mean_W1 * np.sum(inputs.rho1 ** (ls - max_depth - 1) * A[ls]))


def series_samples(spec: GWTreeSpec, model: SignalModel, d: float, horizon: int, master: int,
                   n: int, max_depth: int | None = None, inputs: MomentInputs | None = None,
                   threads: int = 1, node_budget: int = DEFAULT_NODE_BUDGET, backend: str | None = None,
                   replica_offset: int = 0) -> np.ndarray:
    """``n`` independent truncated-series samples of the root opinion.

    Replica r uses master ``replica_master(master, r)``.  With ``max_depth``
    below ``horizon``, subtrees under the cap enter through their conditional
    mean given the frontier, which keeps the mean exact and lowers the
    variance by ``variance_deficit(inputs, max_depth)``.
    """
    if horizon < 0:
        raise InvalidParameterError(f"horizon={horizon} must be nonnegative")
    check_cd(spec.c, d)
    L = horizon if max_depth is None else min(max_depth, horizon)
    expected = spec.expected_size(L)
    if expected > node_budget:
        raise BudgetExceededError(f"expected tree size {expected:.3g} up to depth {L} exceeds the node "
                                  f"budget {node_budget}; lower max_depth")
    a = coefficient_table(horizon + 1, spec.c, d)
    tail = 0.0
    if L < horizon:
        if inputs is None:
            inputs = moment_inputs(spec, model, d)
        tail = _tail_coefficient(inputs, a, horizon, L)
    tables = build_tables(spec, model, d)
    masters = replica_master_array(master, np.arange(replica_offset, replica_offset + n))
    k = _backend.get(backend)
    return k.tree_series_batch(tables, masters, horizon, L, a, tail, expected_nodes=expected, threads=threads)


def series_sample_root(spec: GWTreeSpec, model: SignalModel, d: float, horizon: int, master: int,
                       max_depth: int | None = None, **kw) -> float:
    """One truncated-series sample using ``master`` directly as the tree's seed."""
    L = horizon if max_depth is None else min(max_depth, horizon)
    expected = spec.expected_size(L)
    if expected > kw.get("node_budget", DEFAULT_NODE_BUDGET):
        raise BudgetExceededError(f"expected tree size {expected:.3g} exceeds the node budget")
    a = coefficient_table(horizon + 1, spec.c, d)
    tail = 0.0
    if L < horizon:
        tail = _tail_coefficient(kw.get("inputs") or moment_inputs(spec, model, d), a, horizon, L)
    tables = build_tables(spec, model, d)
    k = _backend.get(kw.get("backend"))
    return float(k.tree_series_batch(tables, np.asarray([master], np.uint64), horizon, L, a, tail)[0])


def tree_root_trajectories(spec: GWTreeSpec, model: SignalModel, d: float, steps: int, master: int,
                           n: int, threads: int = 1, backend: str | None = None,
                           node_budget: int = DEFAULT_NODE_BUDGET) -> np.ndarray:
    """Root opinions R^(0..steps) from the zero state on ``n`` sampled trees (rows)."""
    expected = spec.expected_size(max(steps - 1, 0))
    if expected > node_budget:
        raise BudgetExceededError(f"expected tree size {expected:.3g} exceeds the node budget {node_budget}")
    tables = build_tables(spec, model, d)
    masters = replica_master_array(master, np.arange(n))
    return _backend.get(backend).tree_dynamics_batch(tables, masters, steps, expected_nodes=expected,
                                                     threads=threads)


def series_partial_sums(spec: GWTreeSpec, model: SignalModel, d: float, steps: int, master: int,
                        n: int, threads: int = 1, backend: str | None = None,
                        node_budget: int = DEFAULT_NODE_BUDGET) -> np.ndarray:
    """Series partial sums with frozen streams, matching ``tree_root_trajectories``.

    Column k is sum_{s<k} sum_l a(l,s) sum_{|j|=l} Pi_j W_j^(k-1-s), which
    the dynamics reproduce exactly at step k from the zero state.
    """
    expected = spec.expected_size(max(steps - 1, 0))
    if expected > node_budget:
        raise BudgetExceededError(f"expected tree size {expected:.3g} exceeds the node budget {node_budget}")
    tables = build_tables(spec, model, d)
    masters = replica_master_array(master, np.arange(n))
    P = _backend.get(backend).tree_level_sums_batch(tables, masters, steps, expected_nodes=expected,
                                                    threads=threads)
    a = coefficient_table(max(steps, 1), spec.c, d)
    out = np.zeros((n, steps + 1))
    for k in range(1, steps + 1):
        acc = np.zeros(n)
        for s in range(k):
            for l in range(s + 1):
                if a[l, s] != 0.0:
                    acc = acc + a[l, s] * P[:, l, k - 1 - s]
        out[:, k] = acc
    return out
