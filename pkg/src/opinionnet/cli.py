"""Command-line experiment runner.

    opinionnet simulate --config run.ini --out results
    opinionnet reproduce fig4 --seed 7
    opinionnet tree-analytic
    opinionnet validate --config run.ini

Every run writes deterministic CSV files plus ``manifest.txt``; the thread
count changes speed only.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import dynamics as dyn
from . import metrics
from . import tree_analytics as ta
from .config import (FIGURES, ExperimentConfig, load_config, parse_offspring, preset,
                     validate_config)
from .graph import (GWTreeSpec, MarkLaw, OffspringLaw, assign_equal_weights, generate_er_directed,
                    load_edge_list, overlay_bots)
from .randomness import replica_master
from .signals import ConfigError, parse_media_law


# output helpers

def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def write_histogram(out: Path, xs, bins: int) -> metrics.Histogram:
    h = metrics.histogram(xs, -1.0, 1.0, bins)
    e = h.edges
    _write_csv(out / "histogram.csv", ("bin_lo", "bin_hi", "count"),
               ((float(e[i]), float(e[i + 1]), int(h.counts[i])) for i in range(h.bins)))
    (out / "histogram.svg").write_text(histogram_svg(h), encoding="utf-8")
    return h


def histogram_svg(h: metrics.Histogram, width: int = 480, height: int = 240) -> str:
    """Plain bar chart of the histogram counts."""
    pad = 24
    top = max(int(h.counts.max()), 1) if h.bins else 1
    bw = (width - 2 * pad) / h.bins
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    for i, cnt in enumerate(h.counts):
        bh = (height - 2 * pad) * int(cnt) / top
        parts.append(f'<rect x="{pad + i * bw:.2f}" y="{height - pad - bh:.2f}" width="{bw * 0.9:.2f}" '
                     f'height="{bh:.2f}" fill="steelblue"/>')
    parts.append(f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>')
    parts.append(f'<text x="{pad}" y="{height - 6}" font-size="11">{h.lo:g}</text>')
    parts.append(f'<text x="{width - pad}" y="{height - 6}" font-size="11" text-anchor="end">{h.hi:g}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_summary(out: Path, xs, grouped: metrics.GroupedSummary | None = None, extra=()) -> None:
    mean, var, _, _ = metrics.summary(xs)
    rows = [("all", int(np.size(xs)), mean, var)]
    if grouped is not None:
        rows += [(g.key, g.count, g.mean, g.variance) for g in grouped.groups]
        rows.append(("between_group_variance", int(np.size(xs)), "na", grouped.between_group_variance))
        rows.append(("within_group_mean_variance", int(np.size(xs)), "na", grouped.within_group_mean_variance))
    rows += list(extra)
    _write_csv(out / "summary.csv", ("group", "count", "mean", "variance"), rows)


def write_moments(out: Path, rows) -> None:
    _write_csv(out / "moments.csv", ("quantity", "group", "value", "stderr", "method"), rows)


def write_manifest(out: Path, cfg: ExperimentConfig, info: dict) -> None:
    lines = [f"opinionnet {__version__}", f"mode = {cfg.mode}"]
    if cfg.figure:
        lines.append(f"figure = {cfg.figure}")
    lines.append(f"seed = {cfg.seed}")
    lines += [f"config.{line}" for line in cfg.describe()]
    for k, v in info.items():
        lines.append(f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}")
    for note in cfg.notes:
        lines.append(f"note = {note}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


# graph runs

def build_graph(cfg: ExperimentConfig, master: int):
    if cfg.edge_list:
        g = load_edge_list(cfg.edge_list)
        g = replace(g, c=cfg.c, d=cfg.d)
    else:
        marks = MarkLaw.simple(parse_media_law(cfg.q_law), cfg.s, cfg.tag)
        g = generate_er_directed(cfg.n, cfg.p, marks, master, cfg.c, cfg.d)
    if cfg.n_bots:
        g = overlay_bots(g, cfg.n_bots, cfg.p_bot, cfg.bot_q, master)
    if not g.weighted:
        g = assign_equal_weights(g)
    g.validate()
    return g


def simulate_runs(cfg: ExperimentConfig):
    """Run every replica; returns the graphs, final opinions and trajectories."""
    model = cfg.signal_model()
    steps = cfg.steps if cfg.steps is not None else dyn.steps_for_tolerance(cfg.d, cfg.epsilon)
    graphs, finals, trajs = [], [], []
    for r in range(cfg.replicas):
        m = replica_master(cfg.seed, r)
        g = build_graph(cfg, m)
        state = dyn.initial_state(g.n, cfg.init, m)
        for v, val in cfg.init_fixed:
            state.values[v] = val
        rep = dyn.run(g, model, m, steps, init=state, record=list(cfg.record) or None, threads=cfg.threads)
        graphs.append(g)
        finals.append(rep.final.values)
        trajs.append(rep.trajectory)
    return graphs, finals, trajs, steps


def _write_graph_outputs(out: Path, cfg: ExperimentConfig, graphs, finals, trajs, steps) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    g0, r0 = graphs[0], finals[0]
    deg = g0.in_degree
    _write_csv(out / "opinions.csv", ("vertex_id", "q", "s", "in_degree", "opinion"),
               ((i, float(g0.q[i]), int(g0.s[i]), int(deg[i]), float(r0[i])) for i in range(g0.n)))
    pooled = np.concatenate(finals)
    write_histogram(out, pooled, cfg.bins)
    grouped = None
    if cfg.group_by:
        q = np.concatenate([g.q for g in graphs])
        s = np.concatenate([g.s for g in graphs])
        tag = np.concatenate([g.tag for g in graphs])
        grouped = metrics.grouped_summary(pooled, q, s, tag, cfg.group_by, default="other")
    write_summary(out, pooled, grouped)
    if cfg.record:
        rows = []
        for r, tr in enumerate(trajs):
            for k in range(tr.shape[0]):
                for j, v in enumerate(cfg.record):
                    rows.append((r, k, v, float(tr[k, j])))
        _write_csv(out / "trajectory.csv", ("replica", "step", "vertex", "opinion"), rows)
    return {"k_used": steps, "contraction_bound": dyn.contraction_bound(cfg.d, steps),
            "replicas_in_opinions_csv": "replica 0", "histogram_pool": f"{len(finals)} replicas"}


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> dict:
    graphs, finals, trajs, steps = simulate_runs(cfg)
    return _write_graph_outputs(out, cfg, graphs, finals, trajs, steps)


# tree runs

def tree_spec(cfg: ExperimentConfig, pooled_pmf=None) -> GWTreeSpec:
    if pooled_pmf is not None:
        off = OffspringLaw.explicit(pooled_pmf)
    else:
        off = parse_offspring(cfg.offspring)
        if isinstance(off, tuple):
            # in-degree of a directed Erdos-Renyi graph without self-loops
            off = OffspringLaw.binomial(off[1] - 1, off[2])
    return GWTreeSpec(off, MarkLaw.simple(parse_media_law(cfg.q_law), cfg.s, cfg.tag), cfg.c)


def _report_rows(inputs: ta.MomentInputs, cfg: ExperimentConfig) -> list[tuple]:
    rows = ta.mean_var_general(inputs).rows("general")
    if abs(cfg.c + cfg.d - 1.0) <= 1e-12 and inputs.p_zero == 0 and inputs.p_zero_root == 0:
        rows += ta.mean_var_no_memory(inputs).rows("no-memory")
        for g in inputs.groups:
            mu, var = ta.conditional_mean_var(inputs, g)
            rows += [("cond_mean_root", g, mu, "na", "no-memory"), ("cond_var_root", g, var, "na", "no-memory")]
    return rows


def cmd_tree_analytic(cfg: ExperimentConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    spec = tree_spec(cfg)
    inputs = ta.moment_inputs(spec, cfg.signal_model(), cfg.d, group_by=cfg.group_by or None)
    write_moments(out, _report_rows(inputs, cfg))
    return {"moment_inputs": inputs.method}


def cmd_tree_sample(cfg: ExperimentConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    spec = tree_spec(cfg)
    model = cfg.signal_model()
    inputs = ta.moment_inputs(spec, model, cfg.d)
    L = cfg.max_depth
    if L is None:
        L = min(cfg.horizon, ta.choose_max_depth(inputs, cfg.var_tol))
    xs = ta.series_samples(spec, model, cfg.d, cfg.horizon, cfg.seed, cfg.samples, max_depth=L,
                           inputs=inputs, threads=cfg.threads)
    _write_csv(out / "opinions.csv", ("replica", "opinion"), ((i, float(x)) for i, x in enumerate(xs)))
    write_histogram(out, xs, cfg.bins)
    write_summary(out, xs)
    rows = _report_rows(inputs, cfg)
    mean, var, _, _ = metrics.summary(xs)
    n = xs.size
    rows += [("mean_root", "all", mean, float(np.sqrt(var / n)), "monte-carlo"),
             ("var_root", "all", var, float(np.std((xs - mean) ** 2) / np.sqrt(n)), "monte-carlo")]
    write_moments(out, rows)
    return {"horizon": cfg.horizon, "max_depth": L, "truncation_bound": ta.truncation_bound(cfg.d, cfg.horizon),
            "variance_deficit": ta.variance_deficit(inputs, L) if L < cfg.horizon else 0.0}


def cmd_finite_horizon(cfg: ExperimentConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    inputs = ta.moment_inputs(tree_spec(cfg), cfg.signal_model(), cfg.d)
    mr, vr, mn, vn = ta.finite_horizon_moments(inputs, cfg.k)
    g = f"k={cfg.k}"
    write_moments(out, [("mean_root_k", g, mr, "na", "finite-horizon"), ("var_root_k", g, vr, "na", "finite-horizon"),
                        ("mean_node_k", g, mn, "na", "finite-horizon"), ("var_node_k", g, vn, "na", "finite-horizon")])
    return {"k": cfg.k}


def cmd_memory_compare(cfg: ExperimentConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    inputs = ta.moment_inputs(tree_spec(cfg), cfg.signal_model(), cfg.d)
    mc = ta.memory_comparison(inputs)
    write_moments(out, [("var_memory", "all", mc.var_memory, "na", "memory-compare"),
                        ("var_no_memory", "all", mc.var_no_memory, "na", "memory-compare"),
                        ("inequality_holds", "all", int(mc.inequality_holds), "na", "memory-compare")])
    return {"inequality_holds": mc.inequality_holds}


# figure presets

def _fig4_moments(cfg: ExperimentConfig, graphs) -> list[tuple]:
    """Analytic predictions fed by the pooled in-degree law of the simulated graphs."""
    deg = np.concatenate([g.in_degree for g in graphs])
    pmf = np.bincount(deg) / deg.size
    inputs = ta.moment_inputs(tree_spec(cfg, pmf), cfg.signal_model(), cfg.d, group_by=cfg.group_by)
    rows = _report_rows(inputs, cfg)
    between = sum(g.prob * (cfg.d * g.mean_Z - cfg.d * inputs.groups["all"].mean_Z) ** 2
                  for k, g in inputs.groups.items() if k != "all")
    rows.append(("between_group_variance", "all", between, "na", "no-memory"))
    return rows


def cmd_reproduce(cfg: ExperimentConfig, out: Path) -> dict:
    fig = cfg.figure
    if fig in ("fig5", "fig6"):
        s = cfg.c + cfg.d
        info = {}
        rows = []
        for name, c, d in (("memory", cfg.c, cfg.d), ("no_memory", cfg.c / s, 1.0 - cfg.c / s)):
            sub = replace(cfg, c=c, d=d)
            graphs, finals, trajs, steps = simulate_runs(sub)
            part = _write_graph_outputs(out / name, sub, graphs, finals, trajs, steps)
            info[f"{name}.c"] = c
            info[f"{name}.d"] = d
            info[f"{name}.k_used"] = part["k_used"]
            info[f"{name}.contraction_bound"] = part["contraction_bound"]
            pooled = np.concatenate(finals)
            mean, var, _, _ = metrics.summary(pooled)
            rows.append((name, pooled.size, mean, var))
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "summary.csv", ("group", "count", "mean", "variance"), rows)
        return info
    graphs, finals, trajs, steps = simulate_runs(cfg)
    info = _write_graph_outputs(out, cfg, graphs, finals, trajs, steps)
    if fig == "fig4":
        write_moments(out, _fig4_moments(cfg, graphs))
    return info


RUNNERS = {"simulate": cmd_simulate, "tree-sample": cmd_tree_sample, "tree-analytic": cmd_tree_analytic,
           "finite-horizon": cmd_finite_horizon, "memory-compare": cmd_memory_compare,
           "reproduce": cmd_reproduce}


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None) -> int:
    """Validate, run and write outputs; returns the exit status."""
    problems = validate_config(cfg)
    if problems:
        for p in problems:
            print(f"config error: {p}", file=sys.stderr)
        return 2
    dest = Path(out if out is not None else cfg.out)
    dest.mkdir(parents=True, exist_ok=True)
    info = RUNNERS[cfg.mode](cfg, dest)
    write_manifest(dest, cfg, info)
    return 0


# argument parsing

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style experiment file")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads; results do not depend on it")
    common.add_argument("--replicas", type=int, help="independent replicas")
    common.add_argument("--epsilon", type=float, help="distance to stationarity for the step count")
    p = argparse.ArgumentParser(prog="opinionnet", description=__doc__.splitlines()[1].strip() or None)
    p.add_argument("--version", action="version", version=f"opinionnet {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "tree-sample", "tree-analytic", "finite-horizon", "memory-compare", "validate"):
        sp = sub.add_parser(name, parents=[common])
        if name == "finite-horizon":
            sp.add_argument("--k", type=int, help="horizon k; moments of R^(k+1)")
    rp = sub.add_parser("reproduce", parents=[common])
    rp.add_argument("figure", choices=FIGURES)
    return p


def build_config(args) -> ExperimentConfig:
    if args.command == "reproduce":
        cfg = preset(args.figure)
    elif args.command in ("tree-sample", "tree-analytic", "finite-horizon", "memory-compare"):
        cfg = preset("tree-fixed2", mode=args.command)
        if args.command == "memory-compare":
            cfg = replace(cfg, d=0.25)
    else:
        cfg = ExperimentConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    if args.command not in ("validate",):
        cfg = replace(cfg, mode=args.command)
    for key in ("seed", "out", "threads", "replicas", "epsilon"):
        val = getattr(args, key, None)
        if val is not None:
            cfg = replace(cfg, **{key: val})
    if getattr(args, "k", None) is not None:
        cfg = replace(cfg, k=args.k)
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = build_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.command == "validate":
        problems = validate_config(cfg)
        for prob in problems:
            print(f"violation: {prob}")
        if not problems:
            print("ok")
        return 1 if problems else 0
    return run_experiment(cfg)


if __name__ == "__main__":
    sys.exit(main())
