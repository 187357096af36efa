"""Command-line front end.

Subcommands: parse (check/dump a program), trace (run the interpreter),
graph (dump the fused graph), train / eval (model work over traces),
experiment (the canned studies), and bench (kernel backend timings).
Every run is seeded and timestamp-free, so reruns with the same inputs
produce byte-identical outputs.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import baselines, evalkit, experiments, ggnn, kernels, suites
from .asm import AsmError, parse, pretty
from .encode import EncodeError
from .graph import GRAPH_MODES, GraphError, build_graph, dump_json, neighborhood
from .tracer import TraceError, read_trace, write_trace


def load_config(path):
    """key = value lines; '#' starts a comment."""
    cfg = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_no}: expected key = value")
            key, value = line.split("=", 1)
            cfg[key.strip()] = value.strip()
    return cfg


def _read_program(path):
    with open(path) as fh:
        return parse(fh.read())


def _parse_assignments(pairs, what, int_keys=False):
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ValueError(f"bad {what} assignment {pair!r}, want name=value")
        key, value = pair.split("=", 1)
        key = int(key.strip(), 0) if int_keys else key.strip()
        out[key] = int(value.strip(), 0)
    return out


def cmd_parse(args):
    program = _read_program(args.program)
    if args.json:
        doc = [{"index": ins.index, "mnemonic": ins.mnemonic,
                "kind": ins.kind, "target": ins.target,
                "text": pretty_line}
               for ins, pretty_line in
               zip(program.instructions, pretty(program).splitlines())]
        print(json.dumps(doc, indent=2))
    else:
        sys.stdout.write(pretty(program))
    return 0


def cmd_trace(args):
    if args.corpus:
        _, trace = suites.run_corpus(args.corpus, window=args.window)
    else:
        if not args.program:
            raise ValueError("need a program file or --corpus name")
        program = _read_program(args.program)
        from .tracer import execute
        trace = execute(program,
                        init_regs=_parse_assignments(args.set_reg, "register"),
                        init_mem=_parse_assignments(args.set_mem, "memory",
                                                    int_keys=True),
                        limit=args.limit, window=args.window,
                        program_id=os.path.basename(args.program))
    write_trace(trace, args.out)
    print(f"{trace.program_id or 'trace'}: {len(trace.events)} events, "
          f"{trace.total_instr} instructions -> {args.out}")
    return 0


def cmd_graph(args):
    program = _read_program(args.program)
    graph = build_graph(program, mode=args.mode)
    if args.node is not None:
        graph = neighborhood(graph, args.node, args.radius)
    dump_json(graph, args.out)
    print(f"{len(graph.nodes)} nodes, {graph.n_edges()} edges -> {args.out}")
    return 0


def _train_config(args, overrides):
    cfg = ggnn.TrainConfig(seed=args.seed)
    merged = {
        "steps": args.steps, "d": args.d, "lr": args.lr,
        "epochs": args.epochs, "batch_size": args.batch,
        "encoding": args.encoding, "bits": args.bits, "l2": args.l2,
    }
    for key, value in overrides.items():
        if key == "tasks":
            cfg.tasks = tuple(t.strip() for t in value.split(","))
            continue
        if not hasattr(cfg, key):
            raise ValueError(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        setattr(cfg, key, type(current)(value))
    for key, value in merged.items():
        if value is not None:
            setattr(cfg, key, value)
    if args.tasks:
        cfg.tasks = tuple(t.strip() for t in args.tasks.split(","))
    cfg.seed = args.seed
    return cfg


def _config_dict(cfg):
    return {"steps": cfg.steps, "d": cfg.d, "lr": cfg.lr,
            "head_lr": cfg.head_lr, "epochs": cfg.epochs,
            "batch_size": cfg.batch_size, "seed": cfg.seed, "l2": cfg.l2,
            "encoding": cfg.encoding, "bits": cfg.bits,
            "tasks": list(cfg.tasks)}


def cmd_train(args):
    overrides = load_config(args.config) if args.config else {}
    cfg = _train_config(args, overrides)
    program = _read_program(args.program)
    trace = read_trace(args.trace)
    graph = build_graph(program, mode=args.mode)
    train_events, _ = evalkit.split_events(trace.events, args.split)
    dataset = ggnn.compile_dataset(graph, train_events, cfg.tasks)
    result = ggnn.train([dataset], cfg)
    outdir = evalkit.ensure_outdir(args.out)
    ggnn.save_params(result.params, os.path.join(outdir, "checkpoint.bin"))
    with open(os.path.join(outdir, "history.csv"), "w") as fh:
        fh.write("epoch,loss\n")
        for epoch, loss in enumerate(result.history):
            fh.write(f"{epoch},{evalkit.format_float(loss)}\n")
    evalkit.write_manifest(os.path.join(outdir, "manifest.json"),
                           _config_dict(cfg), args.seed)
    print(f"trained {len(dataset)} samples, {cfg.epochs} epochs "
          f"-> {outdir}/checkpoint.bin")
    return 0


def cmd_eval(args):
    overrides = load_config(args.config) if args.config else {}
    cfg = _train_config(args, overrides)
    program = _read_program(args.program)
    trace = read_trace(args.trace)
    params = ggnn.load_params(args.checkpoint) if args.checkpoint else None
    records, metrics = evalkit.evaluate(program, trace, args.predictor,
                                        config=cfg, params=params,
                                        fraction=args.split, seed=args.seed)
    outdir = evalkit.ensure_outdir(args.out)
    rows = [(args.predictor,
             "prefetch" if name.startswith("prefetch") else "branch",
             name, value)
            for name, value in sorted(metrics.items())]
    evalkit.write_metrics_csv(os.path.join(outdir, "metrics.csv"), rows)
    evalkit.write_records_csv(os.path.join(outdir, "records.csv"), records)
    evalkit.write_manifest(os.path.join(outdir, "manifest.json"),
                           dict(_config_dict(cfg), predictor=args.predictor,
                                split=args.split), args.seed)
    for name, value in sorted(metrics.items()):
        print(f"{args.predictor} {name} = {value:.6g}")
    return 0


def cmd_experiment(args):
    overrides = load_config(args.config) if args.config else {}
    driver = experiments.EXPERIMENTS[args.name]
    results = driver(seed=args.seed, outdir=args.out, overrides=overrides)
    summary = {k: v for k, v in results.items()
               if isinstance(v, (int, float, str))}
    for key, value in sorted(summary.items()):
        print(f"{key} = {value}")
    if "counts" in results:
        for rep, count in results["counts"].items():
            print(f"fully_correct[{rep}] = {count}")
    print(f"reports -> {args.out}")
    return 0


def cmd_bench(args):
    timings = kernels.benchmark(n_nodes=args.nodes,
                                edges_per_type=args.edges,
                                d=args.d, T=args.steps, repeats=args.repeats)
    print(f"{'backend':<10} seconds")
    for backend in ("numba", "numpy"):
        if backend in timings:
            print(f"{backend:<10} {timings[backend]:.4f}")
    if len(timings) == 2:
        print(f"speedup    {timings['numpy'] / timings['numba']:.2f}x")
    return 0


def build_parser():
    top = argparse.ArgumentParser(
        prog="ncf",
        description="Branch and load-address prediction over fused "
                    "static/dynamic program graphs")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse a program and print it back")
    p.add_argument("program")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_parse)

    p = sub.add_parser("trace", help="run a program and write its event trace")
    p.add_argument("program", nargs="?")
    p.add_argument("--corpus", help="run a bundled corpus program instead")
    p.add_argument("--set-reg", action="append", metavar="REG=VAL")
    p.add_argument("--set-mem", action="append", metavar="ADDR=VAL")
    p.add_argument("--limit", type=int, default=1_000_000)
    p.add_argument("--window", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_trace)

    p = sub.add_parser("graph", help="dump the fused graph as JSON")
    p.add_argument("program")
    p.add_argument("--mode", choices=GRAPH_MODES, default="full")
    p.add_argument("--node", type=int, help="restrict to a neighborhood")
    p.add_argument("--radius", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_graph)

    for name in ("train", "eval"):
        p = sub.add_parser(name)
        p.add_argument("--program", required=True)
        p.add_argument("--trace", required=True)
        p.add_argument("--mode", choices=GRAPH_MODES, default="full")
        p.add_argument("--split", type=float, default=0.7)
        p.add_argument("--tasks", help="comma list: branch,prefetch")
        p.add_argument("--encoding", choices=("binary", "scalar", "categorical"))
        p.add_argument("--bits", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--d", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch", type=int)
        p.add_argument("--l2", type=float)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="key = value overrides file")
        p.add_argument("--out", required=True)
        if name == "train":
            p.set_defaults(fn=cmd_train)
        else:
            p.add_argument("--predictor", choices=evalkit.PREDICTORS,
                           required=True)
            p.add_argument("--checkpoint")
            p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("experiment", help="run a canned study")
    p.add_argument("name", choices=sorted(experiments.EXPERIMENTS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="key = value overrides file")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_experiment)

    p = sub.add_parser("bench", help="time the propagation backends")
    p.add_argument("--nodes", type=int, default=2000)
    p.add_argument("--edges", type=int, default=4000)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(fn=cmd_bench)
    return top


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (AsmError, TraceError, GraphError, EncodeError, evalkit.EvalError,
            ggnn.CheckpointError, ggnn.TrainingDiverged,
            baselines.MlpDiverged, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
