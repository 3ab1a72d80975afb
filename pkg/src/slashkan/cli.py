"""Command-line surface: run experiments, write metrics/figures, inspect models.

Subcommands: fit1d (single-tree 1D approximation), kan (one network run),
suite (every catalog task under one common configuration), mnist, inspect,
bench.  Each run takes an optional JSON config (--config) plus a few common
overrides and writes its artifacts into one output directory: config echo,
summary.json, curve CSVs and rendered PNG figures.  Reruns with the same
config are byte-identical except for the summary's timing section.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric abort (NaN),
5 I/O failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import report
from .config import codec_from_dict, codec_to_dict, profile_from_dict, profile_to_dict
from .datasets import (
    DataFormatError,
    RegressionTask,
    default_catalog_path,
    load_catalog,
    load_mnist,
    parse_expression,
    sample_task,
)
from .kan import (
    Network,
    NetworkSpec,
    NumericAbort,
    Seeds,
    TrainConfig,
    train,
    train_classifier,
)
from .tree import ModelFormatError, PatriciaTree

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_IO = 5


class ConfigError(ValueError):
    pass


_DEFAULTS = {
    "task": {"name": "sin1"},
    "catalog": None,  # null -> packaged default catalog
    "network": {
        "widths": None,  # filled per command
        "residual": "none",
        "residual_backprop": "sum",
        "scaled_updates": True,
    },
    "codec": {"kind": "float754", "significand_bits": 16},
    "hidden_codec": {"kind": "float754", "significand_bits": 16},
    "profile": None,   # null -> derived from the codec
    "hidden_profile": None,
    "train": {
        "alpha": 1.0,
        "samples": 100000,
        "test_samples": 10000,
        "checkpoint_test_samples": 1000,
        "seeds": {"weights": 0, "train": 1, "test": 2},
    },
    "mnist": {"data_dir": "data/mnist", "epochs": 30, "eval_subset": 2000,
              "save_model": False},
    "bench": {
        "key_counts": [1024, 4096, 16384, 65536, 131072],
        "precisions": [8, 12, 16, 20, 24, 28],
        "ops": 20000,
        "repeats": 3,
    },
    "grid_points": 1000,
    "out": None,
}


_FREEFORM_KEYS = {"task"}  # alternative shapes: {"name": ...} or {"expression": ...}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in out:
            raise ConfigError(f"unknown config key {key!r}")
        if key in _FREEFORM_KEYS:
            out[key] = copy.deepcopy(value)
        elif isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_run_config(args) -> dict:
    cfg = copy.deepcopy(_DEFAULTS)
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        raw.pop("kind", None)  # informational; the subcommand decides
        cfg = _merge(cfg, raw)
    if args.samples is not None:
        cfg["train"]["samples"] = args.samples
    if args.seed is not None:
        cfg["train"]["seeds"]["train"] = args.seed
        cfg["train"]["seeds"]["test"] = args.seed + 1
    if args.out is not None:
        cfg["out"] = args.out
    if cfg["out"] is None:
        cfg["out"] = f"runs/{args.command}"
    root = os.environ.get("SLASHKAN_OUT")
    if root:
        cfg["out"] = str(Path(root) / cfg["out"])
    return cfg


def _network_spec(cfg: dict, widths) -> NetworkSpec:
    net = cfg["network"]
    try:
        return NetworkSpec(
            widths=list(widths),
            residual=net["residual"],
            residual_backprop=net["residual_backprop"],
            scaled_updates=bool(net["scaled_updates"]),
            input_codec=codec_from_dict(cfg["codec"]),
            hidden_codec=codec_from_dict(cfg["hidden_codec"]),
            input_profile=profile_from_dict(cfg["profile"]) if cfg["profile"] else None,
            hidden_profile=profile_from_dict(cfg["hidden_profile"]) if cfg["hidden_profile"] else None,
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad network config: {exc}") from exc


def _train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    try:
        seeds = Seeds(**t["seeds"])
        return TrainConfig(alpha=float(t["alpha"]), samples=int(t["samples"]),
                           seeds=seeds, test_samples=int(t["test_samples"]),
                           checkpoint_test_samples=int(t["checkpoint_test_samples"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad train config: {exc}") from exc


def _resolve_task(cfg: dict) -> RegressionTask:
    spec = cfg["task"]
    seeds = cfg["train"]["seeds"]
    if "expression" in spec:
        domain = tuple(spec.get("domain", (0.1, 0.9)))
        try:
            task = RegressionTask("inline", parse_expression(spec["expression"]),
                                  int(spec.get("dim", 1)), domain)
        except ValueError as exc:
            raise ConfigError(f"bad task: {exc}") from exc
    else:
        name = spec.get("name")
        if not name:
            raise ConfigError("task needs a 'name' or an 'expression'")
        tasks = {t.name: t for t in _load_catalog(cfg)}
        if name not in tasks:
            raise DataFormatError(f"task {name!r} not in catalog "
                                  f"(have: {', '.join(sorted(tasks))})")
        task = tasks[name]
    task.train_seed = int(seeds["train"])
    task.test_seed = int(seeds["test"])
    return task


def _load_catalog(cfg: dict):
    path = cfg["catalog"] or default_catalog_path()
    if not Path(path).exists():
        raise DataFormatError(f"catalog not found: {path}")
    return load_catalog(path)


def _echo_config(cfg: dict, outdir: Path, spec: NetworkSpec | None) -> None:
    echo = copy.deepcopy(cfg)
    if spec is not None:
        echo["network"]["widths"] = spec.widths
        echo["codec"] = codec_to_dict(spec.input_codec)
        echo["hidden_codec"] = codec_to_dict(spec.hidden_codec)
        echo["profile"] = profile_to_dict(spec.input_profile)
        echo["hidden_profile"] = profile_to_dict(spec.hidden_profile)
    report.write_summary_json(outdir / "config.json", echo)


def _run_summary(outdir, rep, extra=None) -> dict:
    payload = {
        "final_test_rmse": rep.final_test_rmse,
        "best_test_rmse": rep.best_test_rmse,
        "best_step": rep.best_step,
        "processed": rep.processed,
        "skipped": rep.skipped,
        "presented": rep.presented,
        "node_count": rep.node_count,
        "timing": {"wall_time_s": rep.wall_time_s},
    }
    if extra:
        payload.update(extra)
    report.write_summary_json(outdir / "summary.json", payload)
    return payload


def _train_one(task, spec, tcfg, outdir, curve_name="curve.csv"):
    net = Network(spec)
    stream = sample_task(task, "train")
    test_x, test_y = sample_task(task, "test").take(tcfg.test_samples)
    rep = train(net, stream, tcfg, test_data=(test_x, test_y))
    report.write_curve_csv(outdir / curve_name, rep.curve)
    rep.skipped += stream.discarded  # draws rejected before training count too
    rep.presented = rep.processed + rep.skipped
    return net, rep


def cmd_fit1d(cfg: dict) -> int:
    task = _resolve_task(cfg)
    if task.dim != 1:
        raise ConfigError("fit1d needs a one-dimensional task")
    spec = _network_spec(cfg, [1, 1])
    tcfg = _train_config(cfg)
    outdir = report.ensure_dir(cfg["out"])
    _echo_config(cfg, outdir, spec)
    net, rep = _train_one(task, spec, tcfg, outdir)

    from .datasets import compile_expression
    fn = compile_expression(task.expression)
    lo, hi = task.domain
    n = int(cfg["grid_points"])
    xs = lo + (hi - lo) * (np.arange(n) + 0.5) / n
    targets = fn(xs[:, None])
    h = (hi - lo) / 4096.0
    dtargets = (fn(xs[:, None] + h) - fn(xs[:, None] - h)) / (2 * h)
    rows = []
    for x, t, dt in zip(xs, targets, dtargets):
        y = float(net.predict([x])[0])
        dy = float(net.model_derivative([x], 0)[0])
        rows.append((float(x), float(t), y, float(dt), dy))
    report.write_table_csv(outdir / "grid.csv",
                           ("x", "target", "model", "target_deriv", "model_deriv"),
                           rows)
    report.plot_fit(outdir / "fit.png", rows)
    report.plot_rmse_curves(outdir / "curve.png", {task.name: rep.curve})
    net.layers[0][0].serialize()  # ensure serializable before writing
    (outdir / "model.tree").write_bytes(net.layers[0][0].serialize())
    _run_summary(outdir, rep, {"task": task.name})
    print(f"fit1d {task.name}: final RMSE {rep.final_test_rmse:.6g}, "
          f"best {rep.best_test_rmse:.6g}, skipped {rep.skipped}")
    return EXIT_OK


def cmd_kan(cfg: dict, widths=None) -> int:
    task = _resolve_task(cfg)
    widths = widths or cfg["network"]["widths"] or [task.dim, 5, 5, 1]
    if widths[0] != task.dim or widths[-1] != 1:
        raise ConfigError(f"network widths {widths} do not match task "
                          f"({task.dim} inputs, 1 output)")
    spec = _network_spec(cfg, widths)
    tcfg = _train_config(cfg)
    outdir = report.ensure_dir(cfg["out"])
    _echo_config(cfg, outdir, spec)
    net, rep = _train_one(task, spec, tcfg, outdir)
    report.plot_rmse_curves(outdir / "curve.png", {task.name: rep.curve})
    net.save(outdir / "model.sknet")
    _run_summary(outdir, rep, {"task": task.name, "widths": widths})
    print(f"kan {task.name} {widths}: final RMSE {rep.final_test_rmse:.6g}, "
          f"best {rep.best_test_rmse:.6g}")
    return EXIT_OK


def cmd_suite(cfg: dict) -> int:
    tasks = _load_catalog(cfg)
    tcfg = _train_config(cfg)
    outdir = report.ensure_dir(cfg["out"])
    curves = {}
    table = []
    t0 = time.perf_counter()
    spec_echoed = False
    for task in tasks:
        task.train_seed = int(cfg["train"]["seeds"]["train"])
        task.test_seed = int(cfg["train"]["seeds"]["test"])
        widths = [task.dim, 5, 5, 1]
        spec = _network_spec(cfg, widths)
        if not spec_echoed:
            _echo_config(cfg, outdir, spec)
            spec_echoed = True
        net, rep = _train_one(task, spec, tcfg, outdir, f"task_{task.name}.csv")
        curves[task.name] = rep.curve
        table.append((task.name, rep.final_test_rmse, rep.best_test_rmse,
                      rep.best_step, rep.node_count, rep.skipped))
        print(f"suite {task.name}: final {rep.final_test_rmse:.6g} "
              f"best {rep.best_test_rmse:.6g}")
    report.write_table_csv(outdir / "summary_table.csv",
                           ("task", "final_rmse", "best_rmse", "best_step",
                            "nodes", "skipped"), table)
    report.plot_rmse_curves(outdir / "rmse_curves.png", curves)
    report.write_summary_json(outdir / "summary.json", {
        "tasks": {row[0]: {"final_rmse": row[1], "best_rmse": row[2]}
                  for row in table},
        "timing": {"wall_time_s": time.perf_counter() - t0},
    })
    return EXIT_OK


def cmd_mnist(cfg: dict) -> int:
    mcfg = cfg["mnist"]
    train_set, test_set = load_mnist(mcfg["data_dir"])
    widths = cfg["network"]["widths"] or [784, 10, 10]
    base = dict(cfg, codec={"kind": "fixed", "bits": 16})
    if cfg["codec"] != _DEFAULTS["codec"]:
        base["codec"] = cfg["codec"]  # explicit override wins
    spec = _network_spec(base, widths)
    outdir = report.ensure_dir(cfg["out"])
    _echo_config(base, outdir, spec)
    net = Network(spec)
    t0 = time.perf_counter()
    rows = train_classifier(net, train_set, test_set,
                            epochs=int(mcfg["epochs"]),
                            alpha=float(cfg["train"]["alpha"]),
                            seed=int(cfg["train"]["seeds"]["train"]),
                            eval_subset=mcfg["eval_subset"],
                            callbacks=lambda row: print(
                                f"epoch {row['epoch']}: acc {row['test_accuracy']:.4f}"))
    report.write_epoch_csv(outdir / "epochs.csv", rows)
    report.plot_accuracy(outdir / "accuracy.png", rows)
    if mcfg.get("save_model"):
        net.save(outdir / "model.sknet")
    best = max(r["test_accuracy"] for r in rows)
    report.write_summary_json(outdir / "summary.json", {
        "widths": widths,
        "epochs": int(mcfg["epochs"]),
        "final_accuracy": rows[-1]["test_accuracy"],
        "best_accuracy": best,
        "node_count": net.node_count(),
        "timing": {"wall_time_s": time.perf_counter() - t0},
    })
    print(f"mnist {widths}: best accuracy {best:.4f}")
    return EXIT_OK


def cmd_inspect(path: str) -> int:
    blob_path = Path(path)
    if not blob_path.exists():
        raise DataFormatError(f"model file not found: {path}")
    blob = blob_path.read_bytes()
    trees = []
    if blob[:4] == b"SKN1":
        net = Network.load(blob_path)
        print(f"network model: widths {net.spec.widths}, "
              f"residual {net.spec.residual}")
        for l, layer in enumerate(net.layers):
            for i, tree in enumerate(layer):
                trees.append((f"layer{l}/unit{i}", tree))
    else:
        trees.append(("tree", PatriciaTree.deserialize(blob)))
    total_nodes = 0
    total_bytes = 0
    for name, tree in trees:
        hist: dict[int, int] = {}
        for node, depth, _ in tree.nodes():
            hist[depth] = hist.get(depth, 0) + 1
        vec_bytes = 8 * tree.out_dim
        mem = tree.node_count * (2 * vec_bytes + 16) + vec_bytes
        total_nodes += tree.node_count
        total_bytes += mem
        print(f"{name}: nodes {tree.node_count} (leaves {tree.leaf_count}), "
              f"structural depth {tree.max_depth()}, ~{mem} bytes")
        if hist:
            levels = " ".join(f"{d}:{hist[d]}" for d in sorted(hist))
            print(f"  node depth histogram: {levels}")
    print(f"total: {total_nodes} nodes, ~{total_bytes} bytes")
    return EXIT_OK


def _time_updates(tree, codes, ops, repeats):
    import timeit
    best = math.inf
    for _ in range(repeats):
        idx = 0
        n = len(codes)

        def run():
            nonlocal idx
            tree.update(codes[idx % n], _BENCH_DELTA, 1.0)
            idx += 1

        took = timeit.timeit(run, number=ops)
        best = min(best, took / ops)
    return best


_BENCH_DELTA = [0.5]


def cmd_bench(cfg: dict) -> int:
    from .basis import single_region_profile
    from .codec import UnitCode

    bcfg = cfg["bench"]
    outdir = report.ensure_dir(cfg["out"])
    rng = np.random.default_rng(0)
    ops = int(bcfg["ops"])
    repeats = int(bcfg["repeats"])

    def codes_for(p, count):
        keys = rng.integers(0, 1 << p, size=count)
        return [UnitCode((int(k) + 0.5) / (1 << p), int(k), p) for k in keys]

    p_fixed = 20
    rows_n = []
    for n in bcfg["key_counts"]:
        tree = PatriciaTree(1, p_fixed, single_region_profile(p_fixed))
        codes = codes_for(p_fixed, int(n))
        for code in codes:
            tree.update(code, _BENCH_DELTA, 1.0)
        rows_n.append((int(n), _time_updates(tree, codes, ops, repeats)))
    report.write_table_csv(outdir / "bench_n.csv", ("keys", "seconds_per_update"), rows_n)
    report.plot_bench(outdir / "cost_vs_n.png", rows_n, "distinct keys")

    n_fixed = 2**14
    rows_p = []
    for p in bcfg["precisions"]:
        tree = PatriciaTree(1, int(p), single_region_profile(int(p)))
        codes = codes_for(int(p), n_fixed)
        for code in codes:
            tree.update(code, _BENCH_DELTA, 1.0)
        rows_p.append((int(p), _time_updates(tree, codes, ops, repeats)))
    report.write_table_csv(outdir / "bench_p.csv", ("precision_bits", "seconds_per_update"), rows_p)
    report.plot_bench(outdir / "cost_vs_p.png", rows_p, "key precision (bits)")

    logs = np.log2([r[0] for r in rows_n])
    costs = np.array([r[1] for r in rows_n])
    slope, intercept = np.polyfit(logs, costs, 1)
    pred = slope * logs + intercept
    ss_res = float(((costs - pred) ** 2).sum())
    ss_tot = float(((costs - costs.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot else 1.0
    summary = {
        "log_fit_r2_vs_n": r2,
        "cost_ratio_n": rows_n[-1][1] / rows_n[0][1],
        "n_ratio": rows_n[-1][0] / rows_n[0][0],
        "cost_ratio_p": rows_p[-1][1] / rows_p[0][1],
        "p_ratio": rows_p[-1][0] / rows_p[0][0],
        "timing": {"rows_n": rows_n, "rows_p": rows_p},
    }
    report.write_summary_json(outdir / "summary.json", summary)
    print(f"bench: cost ratio over n x{summary['n_ratio']:.0f} = "
          f"{summary['cost_ratio_n']:.2f}, log-fit R2 {r2:.3f}; "
          f"cost ratio over p x{summary['p_ratio']:.1f} = {summary['cost_ratio_p']:.2f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slashkan",
                                     description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("fit1d", "train one tree on a 1D target and dump plot data"),
        ("kan", "train one network on a catalog or inline task"),
        ("suite", "run every catalog task under one common configuration"),
        ("mnist", "train a digit classifier from IDX files"),
        ("bench", "measure per-sample update cost vs tree size and precision"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--samples", type=int, help="training sample override")
        p.add_argument("--seed", type=int, help="train seed override (test = seed+1)")
        p.add_argument("--out", help="output directory")
        if name == "mnist":
            p.add_argument("--data", help="directory with the four IDX files")
            p.add_argument("--epochs", type=int, help="epoch override")
            p.add_argument("--widths", help="comma-separated widths, e.g. 784,10,10")
    p = sub.add_parser("inspect", help="print structure stats of a model file")
    p.add_argument("model", help="path to a .tree or .sknet file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "inspect":
            return cmd_inspect(args.model)
        cfg = load_run_config(args)
        if args.command == "mnist":
            if args.data:
                cfg["mnist"]["data_dir"] = args.data
            if args.epochs is not None:
                cfg["mnist"]["epochs"] = args.epochs
            if args.widths:
                cfg["network"]["widths"] = [int(w) for w in args.widths.split(",")]
        dispatch = {"fit1d": cmd_fit1d, "kan": cmd_kan, "suite": cmd_suite,
                    "mnist": cmd_mnist, "bench": cmd_bench}
        return dispatch[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, ModelFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
