"""External signals W = q (c - sum of in-weights) + d Z.

A ``MediaLaw`` is the law of Z for one class of vertices.  A ``SignalModel``
maps vertex attributes to a media law through an ordered list of exposure
rules (first match wins) and a default law.
"""

from __future__ import annotations

import math
import operator
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .randomness import (InvalidParameterError, RandomStream, check_probabilities,
                         sample_beta, sample_discrete, sample_uniform)

# law kind codes shared with the kernels
UNIFORM, DISCRETE, BETASHIFT, CONST, COPYQ = 0, 1, 2, 3, 4
_KIND_CODES = {"uniform": UNIFORM, "twopoint": DISCRETE, "betashift": BETASHIFT,
               "const": CONST, "copyq": COPYQ}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class VertexAttributes:
    q: float = 0.0
    s: int = 0
    tag: int = 0

    def __post_init__(self):
        if not -1.0 <= self.q <= 1.0:
            raise InvalidParameterError(f"internal opinion q={self.q} outside [-1, 1]")
        if self.s not in (0, 1):
            raise InvalidParameterError(f"stubborn flag s={self.s} must be 0 or 1")


@dataclass(frozen=True)
class MediaLaw:
    """Law of a media signal Z, supported in [-1, 1].

    ``copyq`` is not a fixed law: it returns the vertex's internal opinion.
    """
    kind: str
    params: tuple = ()
    values: tuple = ()
    probs: tuple = ()

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise InvalidParameterError(f"unknown media law kind {self.kind!r}")
        if self.kind == "uniform":
            lo, hi = self.params
            if not (-1.0 <= lo <= hi <= 1.0):
                raise InvalidParameterError(f"uniform({lo},{hi}) must satisfy -1 <= lo <= hi <= 1")
        elif self.kind == "twopoint":
            check_probabilities(self.values, self.probs)
            if any(not -1.0 <= v <= 1.0 for v in self.values):
                raise InvalidParameterError(f"twopoint values {self.values} outside [-1, 1]")
        elif self.kind == "betashift":
            a, b = self.params
            if a <= 0 or b <= 0:
                raise InvalidParameterError(f"betashift shapes must be positive, got ({a},{b})")
        elif self.kind == "const":
            if not -1.0 <= self.params[0] <= 1.0:
                raise InvalidParameterError(f"const({self.params[0]}) outside [-1, 1]")

    @staticmethod
    def uniform(lo: float, hi: float) -> "MediaLaw":
        return MediaLaw("uniform", (float(lo), float(hi)))

    @staticmethod
    def twopoint(values: Sequence[float], probs: Sequence[float]) -> "MediaLaw":
        return MediaLaw("twopoint", (), tuple(float(v) for v in values), tuple(float(p) for p in probs))

    @staticmethod
    def betashift(alpha: float, beta: float) -> "MediaLaw":
        return MediaLaw("betashift", (float(alpha), float(beta)))

    @staticmethod
    def const(z: float) -> "MediaLaw":
        return MediaLaw("const", (float(z),))

    @staticmethod
    def copyq() -> "MediaLaw":
        return MediaLaw("copyq")

    @property
    def code(self) -> int:
        return _KIND_CODES[self.kind]

    def mean(self, q: float = 0.0) -> float:
        if self.kind == "uniform":
            return 0.5 * (self.params[0] + self.params[1])
        if self.kind == "twopoint":
            return float(np.dot(self.values, self.probs))
        if self.kind == "betashift":
            a, b = self.params
            return 2.0 * a / (a + b) - 1.0
        if self.kind == "const":
            return self.params[0]
        return q

    def variance(self, q: float = 0.0) -> float:
        if self.kind == "uniform":
            return (self.params[1] - self.params[0]) ** 2 / 12.0
        if self.kind == "twopoint":
            v = np.asarray(self.values)
            p = np.asarray(self.probs)
            m = float(np.dot(v, p))
            return float(np.dot(p, (v - m) ** 2))
        if self.kind == "betashift":
            a, b = self.params
            return 4.0 * a * b / ((a + b) ** 2 * (a + b + 1.0))
        return 0.0

    def sample(self, stream: RandomStream, q: float = 0.0) -> float:
        if self.kind == "uniform":
            return sample_uniform(stream, *self.params)
        if self.kind == "twopoint":
            return sample_discrete(stream, self.values, self.probs)
        if self.kind == "betashift":
            return -1.0 + 2.0 * sample_beta(stream, *self.params)
        if self.kind == "const":
            return self.params[0]
        return q

    def describe(self) -> str:
        if self.kind == "twopoint":
            return "twopoint(" + ",".join(f"{v!r}:{p!r}" for v, p in zip(self.values, self.probs)) + ")"
        if self.kind == "copyq":
            return "copyq"
        return f"{self.kind}(" + ",".join(repr(x) for x in self.params) + ")"


_LAW_RE = re.compile(r"^\s*([a-z]+)\s*(?:\((.*)\))?\s*$")


def parse_media_law(text: str) -> MediaLaw:
    """Parse ``uniform(a,b)``, ``twopoint(v:p,...)``, ``betashift(a,b)``, ``const(z)`` or ``copyq``."""
    m = _LAW_RE.match(text)
    if not m:
        raise ConfigError(f"cannot parse media law {text!r}")
    kind, args = m.group(1), m.group(2)
    try:
        if kind == "copyq" and not args:
            return MediaLaw.copyq()
        parts = [a.strip() for a in (args or "").split(",") if a.strip()]
        if kind == "twopoint":
            pairs = [p.split(":") for p in parts]
            return MediaLaw.twopoint([float(v) for v, _ in pairs], [float(p) for _, p in pairs])
        nums = [float(p) for p in parts]
        if kind == "uniform" and len(nums) == 2:
            return MediaLaw.uniform(*nums)
        if kind == "betashift" and len(nums) == 2:
            return MediaLaw.betashift(*nums)
        if kind == "const" and len(nums) == 1:
            return MediaLaw.const(nums[0])
    except (ValueError, InvalidParameterError) as exc:
        raise ConfigError(f"bad media law {text!r}: {exc}") from exc
    raise ConfigError(f"unknown or malformed media law {text!r}")


# exposure rules

FIELDS = {"q": 0, "s": 1, "tag": 2}
OPS = {">": 0, ">=": 1, "<": 2, "<=": 3, "==": 4, "!=": 5}
_OP_FUNCS = [operator.gt, operator.ge, operator.lt, operator.le, operator.eq, operator.ne]
_PRED_RE = re.compile(r"^\s*(q|s|tag)\s*(>=|<=|==|!=|=|>|<)\s*([-+0-9.eE]+)\s*$")


@dataclass(frozen=True)
class Predicate:
    field: str
    op: str
    value: float

    @staticmethod
    def parse(text: str) -> "Predicate":
        m = _PRED_RE.match(text)
        if not m:
            raise ConfigError(f"cannot parse exposure predicate {text!r}")
        op = "==" if m.group(2) == "=" else m.group(2)
        return Predicate(m.group(1), op, float(m.group(3)))

    def test(self, attrs: VertexAttributes) -> bool:
        return _OP_FUNCS[OPS[self.op]](float(getattr(attrs, self.field)), self.value)

    def test_array(self, q, s, tag) -> np.ndarray:
        x = {"q": q, "s": s, "tag": tag}[self.field]
        return _OP_FUNCS[OPS[self.op]](np.asarray(x, dtype=float), self.value)

    def describe(self) -> str:
        v = int(self.value) if self.field != "q" and self.value == int(self.value) else self.value
        return f"{self.field}{'=' if self.op == '==' else self.op}{v}"


@dataclass(frozen=True)
class SignalModel:
    """Conditional law of the media signal given vertex attributes."""
    default: MediaLaw
    rules: tuple = field(default_factory=tuple)  # ((Predicate, MediaLaw), ...)

    @staticmethod
    def from_mapping(default: MediaLaw, mapping: dict | Sequence) -> "SignalModel":
        items = mapping.items() if isinstance(mapping, dict) else mapping
        rules = []
        for pred, law in items:
            p = pred if isinstance(pred, Predicate) else Predicate.parse(pred)
            rules.append((p, law if isinstance(law, MediaLaw) else parse_media_law(law)))
        return SignalModel(default, tuple(rules))

    @property
    def laws(self) -> list[MediaLaw]:
        """Rule laws in order, followed by the default law."""
        return [law for _, law in self.rules] + [self.default]

    def resolve_index(self, attrs: VertexAttributes) -> int:
        for j, (pred, _) in enumerate(self.rules):
            if pred.test(attrs):
                return j
        return len(self.rules)

    def resolve(self, attrs: VertexAttributes) -> MediaLaw:
        return self.laws[self.resolve_index(attrs)]

    def resolve_index_array(self, q, s, tag) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        idx = np.full(q.shape, len(self.rules), dtype=np.int32)
        undecided = np.ones(q.shape, dtype=bool)
        for j, (pred, _) in enumerate(self.rules):
            hit = undecided & pred.test_array(q, s, tag)
            idx[hit] = j
            undecided &= ~hit
        return idx

    def support_ok(self) -> bool:
        return True  # enforced by MediaLaw construction

    def describe(self) -> str:
        if not self.rules:
            return self.default.describe()
        body = ", ".join(f'"{p.describe()}": {law.describe()}' for p, law in self.rules)
        return "{ " + body + " } default " + self.default.describe()


def media_sample(model: SignalModel, attrs: VertexAttributes, stream: RandomStream) -> float:
    return model.resolve(attrs).sample(stream, attrs.q)


def external_signal(model: SignalModel, attrs: VertexAttributes, weight_sum: float,
                    stream: RandomStream, c: float, d: float) -> float:
    """W = q (c - weight_sum) + d Z, with Z drawn from the law resolved for ``attrs``."""
    if weight_sum < -1e-12 or weight_sum > c + 1e-12:
        raise InvalidParameterError(f"weight_sum={weight_sum} outside [0, c={c}]")
    z = media_sample(model, attrs, stream)
    w = attrs.q * (c - weight_sum) + d * z
    assert abs(w) <= d + c - weight_sum + 1e-12, "signal bound violated"
    return w


@dataclass(frozen=True)
class LawTable:
    """Flat arrays describing a list of media laws, consumed by the kernels."""
    kind: np.ndarray
    a: np.ndarray
    b: np.ndarray
    ptr: np.ndarray
    vals: np.ndarray
    cum: np.ndarray


def build_law_table(laws: Sequence[MediaLaw]) -> LawTable:
    kind, a, b, ptr, vals, cum = [], [], [], [0], [], []
    for law in laws:
        kind.append(law.code)
        pa = law.params[0] if law.params else 0.0
        pb = law.params[1] if len(law.params) > 1 else 0.0
        a.append(pa)
        b.append(pb)
        if law.kind == "twopoint":
            vals.extend(law.values)
            cum.extend(check_probabilities(law.values, law.probs).tolist())
        ptr.append(len(vals))
    return LawTable(np.asarray(kind, np.int32), np.asarray(a, float), np.asarray(b, float),
                    np.asarray(ptr, np.int64), np.asarray(vals, float), np.asarray(cum, float))


def rule_arrays(model: SignalModel):
    """Exposure rules as (field, op, value) arrays; law j of rule j, default last."""
    fields = np.asarray([FIELDS[p.field] for p, _ in model.rules], dtype=np.int32)
    ops = np.asarray([OPS[p.op] for p, _ in model.rules], dtype=np.int32)
    values = np.asarray([p.value for p, _ in model.rules], dtype=float)
    return fields, ops, values


def law_moments(law: MediaLaw, q: float) -> tuple[float, float]:
    """Conditional mean and variance of Z under ``law`` for a vertex with opinion ``q``."""
    return law.mean(q), law.variance(q)


def signal_bound(c: float, d: float, weight_sum: float) -> float:
    return d + c - weight_sum


def isclose_one(x: float) -> bool:
    return math.isclose(x, 1.0, rel_tol=0.0, abs_tol=1e-12)
