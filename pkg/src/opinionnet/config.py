"""Experiment configuration: INI-style files, figure presets and validation.

Grammar (``configparser``; only ``=`` separates keys from values)::

    [run]        mode, seed, epsilon, steps, replicas, bins, init, record, group_by
    [model]      c, d
    [graph]      n, p, edge_list
    [attributes] q (a law such as twopoint(-1:0.5,1:0.5)), s, tag
    [signals]    default = <law>; rule<k> = <predicate> -> <law>, tried in file order
    [bots]       n, p, q
    [tree]       offspring, horizon, max_depth, samples, k, var_tol

Offspring laws: fixed(n), binomial(n,p), binomial_positive(n,p),
poisson_positive(lam), explicit(p0,p1,...), er(n,p) (in-degree law of a
directed Erdos-Renyi graph without self-loops, i.e. binomial(n-1,p)).
"""

from __future__ import annotations

import configparser
import re
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .signals import ConfigError, Predicate, SignalModel, parse_media_law

MODES = ("simulate", "tree-sample", "tree-analytic", "finite-horizon", "memory-compare", "reproduce")
FIGURES = ("fig1", "fig2", "fig3", "fig4", "fig5", "fig6", "fig7")

FIG4_D = 0.3684 * 9.0 / 7.0   # d * E[Z | q = +1] = 0.3684 with E[Z | q = +1] = 7/9
FIG4_C = 1.0 - FIG4_D
SIGN_EXPOSURE = (("q>0", "betashift(8,1)"), ("q<=0", "betashift(1,8)"))


@dataclass
class ExperimentConfig:
    mode: str = "simulate"
    figure: str = ""
    seed: int = 1
    c: float = 0.5
    d: float = 0.5
    epsilon: float = 1e-6
    steps: int | None = None
    replicas: int = 1
    threads: int = 1
    bins: int = 40
    init: str = "zero"
    init_fixed: tuple = ()              # ((vertex, value), ...) applied after ``init``
    record: tuple = ()
    group_by: tuple = ()
    n: int = 1000
    p: float = 0.03
    edge_list: str = ""
    q_law: str = "const(0)"
    s: int = 0
    tag: int = 0
    default_law: str = "uniform(-1,1)"
    rules: tuple = ()                   # ((predicate, law), ...)
    n_bots: int = 0
    p_bot: float = 0.0
    bot_q: float = 1.0
    offspring: str = "fixed(2)"
    horizon: int = 40
    max_depth: int | None = None
    samples: int = 10000
    k: int = 5
    var_tol: float = 1e-6
    out: str = "out"
    notes: tuple = ()

    def signal_model(self) -> SignalModel:
        return SignalModel.from_mapping(parse_media_law(self.default_law), list(self.rules))

    def describe(self) -> list[str]:
        """``key = value`` lines for the manifest; thread count is left out since it never changes results."""
        out = []
        for f in fields(self):
            if f.name in ("threads", "out"):
                continue
            out.append(f"{f.name} = {getattr(self, f.name)!r}")
        return out


PRESETS: dict[str, dict] = {
    "fig1": dict(c=0.05, d=0.95, q_law="uniform(-1,1)", default_law="uniform(-0.03,0.03)", init="pm1",
                 notes=("consensus: large d and a narrow media law",)),
    "fig2": dict(c=0.95, d=0.05, q_law="twopoint(-1:0.5,1:0.5)", default_law="twopoint(-1:0.5,1:0.5)",
                 init="pm1", notes=("small d with media law uniform on {-1, 1}",)),
    "fig3": dict(c=0.95, d=0.05, q_law="twopoint(-1:0.5,1:0.5)", default_law="betashift(1,8)", init="pm1",
                 notes=("small d with a skewed media law -1+2Beta(1,8)",)),
    "fig4": dict(c=FIG4_C, d=FIG4_D, q_law="twopoint(-1:0.5,1:0.5)", default_law="betashift(1,8)",
                 rules=SIGN_EXPOSURE, init="pm1", replicas=20, group_by=("q>0", "q<=0"),
                 notes=("selective exposure; d calibrated so that d * 7/9 = 0.3684, c = 1 - d",)),
    "fig5": dict(c=0.5, d=0.25, q_law="twopoint(-1:0.5,1:0.5)", default_law="uniform(-1,1)", init="pm1",
                 notes=("memory c=0.5, d=0.25 against the proportional no-memory pair c=2/3, d=1/3",)),
    "fig6": dict(c=0.5, d=0.25, q_law="twopoint(-1:0.5,1:0.5)", default_law="uniform(-1,1)", init="pm1",
                 init_fixed=((0, -1.0), (1, 1.0)), record=(0, 1), steps=60,
                 notes=("trajectories of vertices 0 and 1 started at -1 and +1",)),
    "fig7": dict(c=FIG4_C, d=FIG4_D, n=800, q_law="twopoint(-1:0.5,1:0.5)", default_law="betashift(1,8)",
                 rules=(("s=1", "const(1)"),) + SIGN_EXPOSURE, n_bots=200, p_bot=0.03, bot_q=1.0,
                 init="pm1", replicas=20, group_by=("s=1", "q>0", "q<=0"),
                 notes=("200 stubborn bots with q=1 and Z=1 added to 800 regular vertices",)),
    "tree-fixed2": dict(c=0.5, d=0.5, q_law="const(0)", default_law="uniform(-1,1)", offspring="fixed(2)",
                        horizon=40, notes=("no-memory fixed(2) tree with Z ~ Unif(-1,1)",)),
}

_INT = {"seed", "steps", "replicas", "threads", "bins", "n", "s", "tag", "n_bots", "horizon", "max_depth",
        "samples", "k"}
_FLOAT = {"c", "d", "epsilon", "p", "p_bot", "bot_q", "var_tol"}
_SECTION_KEYS = {
    "run": {"mode": "mode", "figure": "figure", "seed": "seed", "epsilon": "epsilon", "steps": "steps",
            "replicas": "replicas", "threads": "threads", "bins": "bins", "init": "init", "record": "record",
            "group_by": "group_by", "out": "out"},
    "model": {"c": "c", "d": "d"},
    "graph": {"n": "n", "p": "p", "edge_list": "edge_list"},
    "attributes": {"q": "q_law", "s": "s", "tag": "tag"},
    "signals": {"default": "default_law"},
    "bots": {"n": "n_bots", "p": "p_bot", "q": "bot_q"},
    "tree": {"offspring": "offspring", "horizon": "horizon", "max_depth": "max_depth", "samples": "samples",
             "k": "k", "var_tol": "var_tol"},
}


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    base = dict(PRESETS[name])
    base.update(overrides)
    mode = "reproduce" if name.startswith("fig") else base.pop("mode", "tree-analytic")
    return replace(ExperimentConfig(), mode=mode, figure=name if name.startswith("fig") else "", **base)


def _convert(key: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if key in _INT:
            return None if raw.lower() in ("", "none") and key in ("steps", "max_depth") else int(raw, 0)
        if key in _FLOAT:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from exc
    if key == "record":
        return tuple(int(x) for x in raw.split(",") if x.strip())
    if key == "group_by":
        return tuple(x.strip() for x in raw.split(",") if x.strip())
    return raw


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Read an INI-style file on top of ``base``; unknown sections or keys raise ``ConfigError``."""
    cp = configparser.ConfigParser(delimiters=("=",), interpolation=None)
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = base or ExperimentConfig()
    updates: dict = {}
    rules = []
    for section in cp.sections():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            where = f"[{section}] {key}"
            if section == "signals" and key.startswith("rule"):
                if "->" not in raw:
                    raise ConfigError(f"{where}: expected '<predicate> -> <law>'")
                pred, law = (x.strip() for x in raw.split("->", 1))
                Predicate.parse(pred)
                parse_media_law(law)
                rules.append((pred, law))
                continue
            if key not in _SECTION_KEYS[section]:
                raise ConfigError(f"unknown key {where}")
            name = _SECTION_KEYS[section][key]
            updates[name] = _convert(name, raw, where)
    if rules:
        updates["rules"] = tuple(rules)
    return replace(cfg, **updates)


_OFF_RE = re.compile(r"^\s*([a-z_]+)\s*\((.*)\)\s*$")


def parse_offspring(text: str):
    """Offspring law from text; ``er(n,p)`` returns the pair (n, p) for the caller to estimate."""
    from .graph import OffspringLaw
    m = _OFF_RE.match(text)
    if not m:
        raise ConfigError(f"cannot parse offspring law {text!r}")
    kind = m.group(1)
    try:
        args = [float(a) for a in m.group(2).split(",") if a.strip()]
        if kind == "fixed" and len(args) == 1:
            return OffspringLaw.fixed(int(args[0]))
        if kind == "binomial" and len(args) == 2:
            return OffspringLaw.binomial(int(args[0]), args[1])
        if kind == "binomial_positive" and len(args) == 2:
            return OffspringLaw.binomial(int(args[0]), args[1], conditioned_positive=True)
        if kind == "poisson_positive" and len(args) == 1:
            return OffspringLaw.poisson_positive(args[0])
        if kind == "explicit" and args:
            return OffspringLaw.explicit(args)
        if kind == "er" and len(args) == 2:
            return ("er", int(args[0]), args[1])
    except ValueError as exc:
        raise ConfigError(f"bad offspring law {text!r}: {exc}") from exc
    raise ConfigError(f"unknown or malformed offspring law {text!r}")


def validate_config(cfg: ExperimentConfig) -> list[str]:
    """Every violated invariant as a message naming the key; empty when the config is usable."""
    out = []
    if cfg.mode not in MODES:
        out.append(f"mode: {cfg.mode!r} is not one of {', '.join(MODES)}")
    if cfg.mode == "reproduce" and cfg.figure not in FIGURES:
        out.append(f"figure: {cfg.figure!r} is not one of {', '.join(FIGURES)}")
    if not 0.0 <= cfg.c < 1.0:
        out.append(f"c: {cfg.c} must lie in [0, 1)")
    if cfg.d <= 0.0:
        out.append(f"d: {cfg.d} must be > 0; the dynamics have no stationary law without media input (d>0)")
    elif cfg.d > 1.0:
        out.append(f"d: {cfg.d} must be at most 1")
    if cfg.c + cfg.d > 1.0 + 1e-12:
        out.append(f"c+d>1: c={cfg.c}, d={cfg.d}")
    if cfg.replicas < 1:
        out.append(f"replicas: {cfg.replicas} must be at least 1")
    if cfg.threads < 1:
        out.append(f"threads: {cfg.threads} must be at least 1")
    if cfg.bins < 1:
        out.append(f"bins: {cfg.bins} must be at least 1")
    if cfg.epsilon <= 0:
        out.append(f"epsilon: {cfg.epsilon} must be positive")
    if cfg.steps is not None and cfg.steps < 0:
        out.append(f"steps: {cfg.steps} must be nonnegative")
    if not 0 <= cfg.seed < 2 ** 64:
        out.append(f"seed: {cfg.seed} must be an unsigned 64-bit integer")
    if cfg.n < 1:
        out.append(f"n: {cfg.n} must be at least 1")
    if not 0.0 <= cfg.p <= 1.0:
        out.append(f"p: {cfg.p} outside [0, 1]")
    if cfg.n_bots < 0 or not 0.0 <= cfg.p_bot <= 1.0 or not -1.0 <= cfg.bot_q <= 1.0:
        out.append("bots: need n >= 0, p in [0, 1] and q in [-1, 1]")
    if cfg.init not in ("zero", "pm1"):
        out.append(f"init: {cfg.init!r} must be zero or pm1")
    for key, text in (("q", cfg.q_law), ("default", cfg.default_law)):
        try:
            law = parse_media_law(text)
            if key == "q" and law.kind == "copyq":
                out.append("q: internal opinions cannot use copyq")
        except ConfigError as exc:
            out.append(f"{key}: {exc}")
    for pred, law in cfg.rules:
        try:
            Predicate.parse(pred)
            parse_media_law(law)
        except ConfigError as exc:
            out.append(f"rule {pred!r}: {exc}")
    for pred in cfg.group_by:
        try:
            Predicate.parse(pred)
        except ConfigError as exc:
            out.append(f"group_by: {exc}")
    if cfg.mode in ("tree-sample", "tree-analytic", "finite-horizon", "memory-compare"):
        try:
            parse_offspring(cfg.offspring)
        except (ConfigError, Exception) as exc:
            out.append(f"offspring: {exc}")
        if cfg.horizon < 0:
            out.append(f"horizon: {cfg.horizon} must be nonnegative")
        if cfg.samples < 1:
            out.append(f"samples: {cfg.samples} must be at least 1")
        if cfg.k < 0:
            out.append(f"k: {cfg.k} must be nonnegative")
    if cfg.mode == "memory-compare" and cfg.c + cfg.d >= 1.0:
        out.append("c+d: memory-compare needs c+d < 1")
    return out


def config_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)
