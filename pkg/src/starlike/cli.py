"""Batch experiment runner.

    starlike COMMAND --config run.toml --out results/ [--threads N] [--verbose] [--figures]

Each command writes ``COMMAND.csv``, a JSON mirror ``COMMAND.json`` and plot
data ``COMMAND_plot.csv`` (``x, y, series`` triples) into ``--out``.
``--figures`` additionally renders ``COMMAND.png`` from the plot data.
Exit status: 0 on success, 2 on a config error, 1 on any other failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import halfline, oracle
from .config import ConfigError, Section, build_graph, load_config, read_grid
from .graph import GraphError, VertexId, beta_coefficient, build_sht, sphere_sizes, tree_dimension
from .halfline import MFunctionError
from .operator import assemble_truncated, moment
from .spectral import EpsSchedule, multiplicity_profile, resolvent_batch, subordinate_space_dim

log = logging.getLogger("starlike")

COMMANDS = ("spectrum", "resolvent", "multiplicity", "subordinacy", "sharpness", "dims", "paths", "tree")


class Table:
    def __init__(self, columns):
        self.columns = list(columns)
        self.rows: list[list] = []
        self.plot: list[tuple] = []

    def add(self, row):
        if len(row) != len(self.columns):
            raise AssertionError(f"row has {len(row)} fields, header {len(self.columns)}")
        self.rows.append(list(row))


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def _json_value(x):
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else _fmt(x)
    return str(x)


def write_outputs(out: Path, command: str, table: Table, figures: bool = False) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{command}.csv", out / f"{command}.json", out / f"{command}_plot.csv"]
    with open(paths[0], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.columns)
        for row in table.rows:
            w.writerow([_fmt(x) for x in row])
    doc = {"command": command, "columns": table.columns,
           "rows": [[_json_value(x) for x in row] for row in table.rows]}
    paths[1].write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    with open(paths[2], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "series"])
        for x, y, s in table.plot:
            w.writerow([_fmt(x), _fmt(y), s])
    if figures:
        paths.append(_render(out / f"{command}.png", command, table.plot))
    return paths


def _render(path: Path, title: str, triples) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    series = sorted({s for _, _, s in triples})
    for s in series:
        pts = np.array([(x, y) for x, y, t in triples if t == s], dtype=float)
        ax.plot(pts[:, 0], pts[:, 1], ".", ms=3, label=s)
    if 1 < len(series) <= 10:
        ax.legend(fontsize=7)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


# -- commands ------------------------------------------------------------------

def _schedule(sec: Section) -> EpsSchedule:
    count = sec.integer("count", 20, minimum=3)
    factor = sec.number("factor", 0.5, positive=True)
    if factor >= 1:
        raise ConfigError(f"{sec.name}.factor", "must lie in (0, 1)")
    return EpsSchedule(sec.number("eps0", 0.1, positive=True), factor, count)


def _pmap(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def cmd_spectrum(cfg, threads):
    g, _ = build_graph(cfg)
    sec = Section(cfg.get("spectrum", {}), "spectrum")
    sec.keys_known({"depth", "cluster_tol"})
    depth = sec.integer("depth", required=True, minimum=0)
    trunc = assemble_truncated(g, depth, cap=oracle.DENSE_CAP)
    w = oracle.dense_eig(trunc.matrix).eigenvalues
    scale = max(1.0, float(np.max(np.abs(w))))
    tol = sec.number("cluster_tol", 1e-8 * scale, positive=True)
    labels = np.concatenate([[0], np.cumsum(np.diff(w) > tol)]) if len(w) else np.empty(0, int)
    sizes = np.bincount(labels) if len(w) else []
    t = Table(["index", "eigenvalue", "cluster", "cluster_size"])
    for k, (E, c) in enumerate(zip(w, labels)):
        t.add([k, E, int(c), int(sizes[c])])
        t.plot.append((k, E, "eigenvalue"))
    return t


def cmd_resolvent(cfg, threads):
    g, _ = build_graph(cfg)
    sec = Section(cfg.get("resolvent", {}), "resolvent")
    sec.keys_known({"re", "im", "tol"})
    re = read_grid(sec, "re")
    im = sec.number("im", required=True, positive=True)
    tol = sec.number("tol", 1e-12, positive=True)
    K = g.size
    t = Table(["re_z", "im_z", "u", "v", "re_M", "im_M", "error"])

    def one(x):
        try:
            return resolvent_batch(g, [x + 1j * im], tol=tol)[0], ""
        except MFunctionError as exc:
            return np.full((K, K), np.nan + 0j), f"m_function: {exc}".replace(",", ";")

    for x, (M, err) in zip(re, _pmap(one, list(re), threads)):
        for u in range(K):
            for v in range(K):
                t.add([x, im, u, v, M[u, v].real, M[u, v].imag, err])
        t.plot.append((x, np.trace(M).imag / math.pi, "density"))
    return t


def cmd_multiplicity(cfg, threads):
    g, _ = build_graph(cfg)
    sec = Section(cfg.get("multiplicity", {}), "multiplicity")
    sec.keys_known({"energies", "eps0", "factor", "count", "rank_tol"})
    grid = read_grid(sec, "energies")
    schedule = _schedule(sec)
    rank_tol = sec.number("rank_tol", 1e-3, positive=True)
    K = g.size
    cols = (["E", "eps_min", "converged", "rank"] + [f"sv_{k + 1}" for k in range(K)]
            + [f"P_{u}_{v}" for u in range(K) for v in range(K)] + ["singular", "error"])
    t = Table(cols)
    for s in multiplicity_profile(g, grid, schedule, rank_tol, threads):
        t.add(s.row() + [s.error.replace(",", ";")])
        t.plot.append((s.E, s.rank, "rank"))
        t.plot.append((s.E, int(s.singular), "singular"))
    return t


def cmd_subordinacy(cfg, threads):
    g, _ = build_graph(cfg)
    sec = Section(cfg.get("subordinacy", {}), "subordinacy")
    sec.keys_known({"branch", "energy", "theta", "eta", "lengths"})
    i = sec.integer("branch", 1, minimum=1)
    if i > g.m:
        raise ConfigError("subordinacy.branch", f"graph has only {g.m} branches")
    E = sec.number("energy", required=True)
    theta, eta = sec.number("theta", 0.0), sec.number("eta", math.pi / 2)
    lengths = read_grid(sec, "lengths")
    if np.any(lengths < 1):
        raise ConfigError("subordinacy.lengths", "lengths must be >= 1")
    rule = g.branches[i - 1]
    t = Table(["L", "ratio", "theta_min", "condition"])
    ratios = _pmap(lambda L: halfline.subordinacy_ratio(rule, E, theta, eta, L), list(lengths), threads)
    for L, r in zip(lengths, ratios):
        th, cond = halfline.subordinate_direction(rule, E, max(2.0, L))
        t.add([L, r, th, cond])
        t.plot.append((L, r, "ratio"))
    return t


def cmd_sharpness(cfg, threads):
    from .sharpness import degeneracy_experiment
    g, model = build_graph(cfg)
    if model is None:
        raise ConfigError("graph.kind", "sharpness command needs kind = \"sharpness\"")
    sec = Section(cfg.get("sharpness", {}), "sharpness")
    sec.keys_known({"N", "cluster_tol", "match_tol"})
    N = sec.integer("N", required=True, minimum=1)
    ctol = sec.number("cluster_tol", None, positive=True) if "cluster_tol" in sec.data else None
    mtol = sec.number("match_tol", None, positive=True) if "match_tol" in sec.data else None
    rep = degeneracy_experiment(model, N, ctol, mtol)
    t = Table(["cluster", "energy", "size", "matched_index", "gap"])
    for k, c in enumerate(rep.clusters):
        t.add([k, c.energy, c.size, c.matched_index, c.gap])
        t.plot.append((c.energy, c.size, "matched" if c.matched_index > 0 else "other"))
    log.info("clusters of size m-1 on half-line eigenvalues: %d", rep.matched_degenerate)
    return t


def cmd_dims(cfg, threads):
    g, _ = build_graph(cfg)
    sec = Section(cfg.get("dims", {}), "dims")
    sec.keys_known({"energies", "L", "tol"})
    grid = read_grid(sec, "energies")
    L = sec.number("L", required=True)
    if L < 2:
        raise ConfigError("dims.L", "must be >= 2")
    tol = sec.number("tol", 1e-6, positive=True)
    res = _pmap(lambda E: subordinate_space_dim(g, E, L, tol, True), list(grid), threads)
    t = Table(["E", "L", "dim", "sv_min_rel"])
    for E, (d, sv) in zip(grid, res):
        t.add([E, L, d, sv[-1] / sv[0]])
        t.plot.append((E, d, "dim"))
    return t


def _vertex(spec, field):
    if not (isinstance(spec, list) and len(spec) == 2 and all(isinstance(x, int) for x in spec)):
        raise ConfigError(field, "vertex must be [branch, index] (branch 0 = compact)")
    return VertexId(*spec)


def cmd_paths(cfg, threads):
    g, _ = build_graph(cfg)
    sec = Section(cfg.get("paths", {}), "paths")
    sec.keys_known({"pairs"})
    pairs = sec.raw("pairs", required=True)
    if not isinstance(pairs, list):
        raise ConfigError("paths.pairs", "expected a list of {v, w, n} tables")
    t = Table(["v", "w", "n", "beta", "moment"])
    for k, p in enumerate(pairs):
        ps = Section(p, f"paths.pairs[{k}]")
        v, w = _vertex(ps.raw("v", required=True), f"{ps.name}.v"), _vertex(ps.raw("w", required=True), f"{ps.name}.w")
        n = ps.integer("n", required=True, minimum=1)
        try:
            beta = beta_coefficient(g, v, w, n)
        except GraphError as exc:
            raise ConfigError(ps.name, str(exc)) from None
        t.add([repr(v), repr(w), n, beta, moment(g, v, w, n)])
        t.plot.append((n, beta, "beta"))
    return t


def cmd_tree(cfg, threads):
    sec = Section(cfg.get("tree", {}), "tree")
    sec.keys_known({"branching", "n_max"})
    branching = sec.raw("branching", required=True)
    if not isinstance(branching, list) or not all(isinstance(x, int) and x >= 1 for x in branching):
        raise ConfigError("tree.branching", "expected a list of integers >= 1")
    n_max = sec.integer("n_max", required=True, minimum=2)
    g = build_sht(branching)
    log.info("tree: |K| = %d, m = %d", g.size, g.m)
    sizes = sphere_sizes(branching, n_max)
    dim = tree_dimension(branching, n_max)
    t = Table(["n", "sphere_size", "ball_size", "partial_dimension"])
    ball = 0
    for n, s in enumerate(sizes):
        ball += s
        part = dim.partial[n - 2] if n >= 2 else float("nan")
        t.add([n, s, ball, part])
        if n >= 2:
            t.plot.append((n, part, "dimension"))
    return t


DISPATCH = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def run(command: str, cfg: dict, out: Path, threads: int = 1, figures: bool = False) -> list[Path]:
    table = DISPATCH[command](cfg, threads)
    return write_outputs(out, command, table, figures)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="starlike", description="Spectral experiments on star-like graphs.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="TOML config file")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--figures", action="store_true", help="also render PNG figures")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.threads < 1:
        print("error: --threads: must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
        paths = run(args.command, cfg, Path(args.out), args.threads, args.figures)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in paths:
        log.info("wrote %s", path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
