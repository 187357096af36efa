"""Evaluation harness: chronological splits, metrics, online baseline
drivers, and deterministic CSV/manifest reports.

Traces split chronologically (first 70% of events by default).  Online
predictors walk the whole trace but are scored on the held-out region
only; learned predictors fit on the training region.  Branch results
report accuracy and mispredictions per thousand instructions retired in
the scored region; address results report the fraction of labeled loads
whose 64-bit prediction matches exactly.

Reports avoid timestamps and unordered dicts so identical runs produce
byte-identical files.
"""

import csv
import json
import os
import platform
from dataclasses import dataclass

import numpy as np

from . import baselines, ggnn, kernels


class EvalError(Exception):
    pass


PREDICTORS = ("bimodal", "perceptron", "mlp", "stride", "ac", "ncf")


def split_events(events, fraction=0.7):
    """Chronological split at floor(n * fraction)."""
    if not 0.0 < fraction < 1.0:
        raise EvalError(f"split fraction must be in (0, 1), got {fraction}")
    cut = int(np.floor(len(events) * fraction))
    return list(events[:cut]), list(events[cut:])


def mpki(mispredictions, instructions):
    if instructions <= 0:
        raise EvalError("mpki needs a positive instruction count")
    return 1000.0 * mispredictions / instructions


def complete_accuracy(records):
    """Fraction of address predictions that match all 64 bits."""
    if not records:
        raise EvalError("complete accuracy over zero predictions")
    return sum(1 for r in records if r.correct) / len(records)


def region_instructions(trace, first_eval_event):
    """Instructions retired from the first scored event to the end."""
    if first_eval_event is None:
        return 0
    return trace.total_instr - first_eval_event.instr_count


@dataclass(frozen=True)
class Record:
    seq: int
    pc: int
    task: str  # "branch" or "prefetch"
    predicted: object  # bool / int address / None when no prediction
    actual: object

    @property
    def correct(self):
        return self.predicted is not None and self.predicted == self.actual


def run_branch_counter(events, score_from, predictor):
    """Online driver for stateful branch predictors (predict, then learn)."""
    records = []
    for ev in events:
        if ev.kind != "branch":
            continue
        guess = predictor.predict(ev.pc)
        if ev.seq >= score_from:
            records.append(Record(ev.seq, ev.pc, "branch", bool(guess), ev.taken))
        predictor.update(ev.pc, ev.taken)
    return records


def run_address_baseline(events, score_from, predictor):
    """Online driver for stride/correlation tables over labeled loads."""
    is_corr = isinstance(predictor, baselines.AddressCorrelation)
    records = []
    for ev in events:
        if ev.kind != "load":
            continue
        predictor.update(ev.pc, ev.addr)
        if not ev.next_present:
            continue
        guess = predictor.predict(ev.pc, ev.addr) if is_corr else predictor.predict(ev.pc)
        if ev.seq >= score_from:
            records.append(Record(ev.seq, ev.pc, "prefetch", guess, ev.next_addr))
    return records


def run_branch_mlp(train_events, eval_events, seed=0, epochs=40, lr=0.001,
                   batch_size=32, l2=0.0):
    """Snapshot MLP fit on the training region, scored on the rest."""
    train_branches = [ev for ev in train_events if ev.kind == "branch"]
    eval_branches = [ev for ev in eval_events if ev.kind == "branch"]
    if not train_branches or not eval_branches:
        raise EvalError("need branch events on both sides of the split")
    x = np.stack([baselines.branch_snapshot_features(ev) for ev in train_branches])
    y = np.array([float(ev.taken) for ev in train_branches])
    mlp = baselines.make_branch_mlp(seed=seed, l2=l2)
    mlp.fit(x, y, epochs=epochs, lr=lr, batch_size=batch_size, seed=seed,
            optimizer="sgd")
    xe = np.stack([baselines.branch_snapshot_features(ev) for ev in eval_branches])
    probs = mlp.predict_proba(xe)
    return [Record(ev.seq, ev.pc, "branch", bool(p >= 0.5), ev.taken)
            for ev, p in zip(eval_branches, probs)]


def run_ncf(graph, train_events, eval_events, config, params=None, enc=None):
    """Train (unless given a checkpoint) on the training region, then
    score both tasks on the held-out region."""
    if params is None:
        ds = ggnn.compile_dataset(graph, train_events, tasks=config.tasks)
        result = ggnn.train([ds], config)
        params, enc = result.params, result.enc
    elif enc is None:
        enc = ggnn.fit_encoding(config.encoding, [
            ggnn.compile_dataset(graph, train_events, tasks=config.tasks)],
            bits=config.bits)
    eval_ds = ggnn.compile_dataset(graph, eval_events, tasks=config.tasks)
    records = []
    if len(eval_ds):
        probs, addrs = ggnn.predict_dataset(params, eval_ds, enc, config.steps)
        by_seq = {ev.seq: ev for ev in eval_events}
        for i in range(len(eval_ds)):
            ev = by_seq[int(eval_ds.seqs[i])]
            if eval_ds.kinds[i] == 0:
                records.append(Record(ev.seq, ev.pc, "branch",
                                      bool(probs[i] >= 0.5), ev.taken))
            else:
                records.append(Record(ev.seq, ev.pc, "prefetch",
                                      int(addrs[i]), ev.next_addr))
    return records, params, enc


def branch_metrics(records, instructions):
    branch = [r for r in records if r.task == "branch"]
    if not branch:
        raise EvalError("no branch predictions to score")
    wrong = sum(1 for r in branch if not r.correct)
    return {
        "branch_accuracy": 1.0 - wrong / len(branch),
        "branch_mispredictions": float(wrong),
        "branch_mpki": mpki(wrong, instructions),
        "branch_predictions": float(len(branch)),
    }


def prefetch_metrics(records):
    pf = [r for r in records if r.task == "prefetch"]
    return {
        "prefetch_complete_accuracy": complete_accuracy(pf),
        "prefetch_predictions": float(len(pf)),
    }


def evaluate(program, trace, predictor, config=None, params=None,
             fraction=0.7, seed=0):
    """Split, run one predictor, and collect its metric dict."""
    from .graph import build_graph

    if predictor not in PREDICTORS:
        raise EvalError(f"unknown predictor {predictor!r}")
    train_events, eval_events = split_events(trace.events, fraction)
    if not eval_events:
        raise EvalError("empty evaluation region")
    score_from = eval_events[0].seq
    instructions = region_instructions(trace, eval_events[0])

    if predictor == "bimodal":
        records = run_branch_counter(trace.events, score_from, baselines.Bimodal())
        metrics = branch_metrics(records, instructions)
    elif predictor == "perceptron":
        records = run_branch_counter(trace.events, score_from, baselines.Perceptron())
        metrics = branch_metrics(records, instructions)
    elif predictor == "mlp":
        records = run_branch_mlp(train_events, eval_events, seed=seed)
        metrics = branch_metrics(records, instructions)
    elif predictor == "stride":
        records = run_address_baseline(trace.events, score_from, baselines.Stride())
        metrics = prefetch_metrics(records)
    elif predictor == "ac":
        records = run_address_baseline(trace.events, score_from,
                                       baselines.AddressCorrelation())
        metrics = prefetch_metrics(records)
    else:
        config = config or ggnn.TrainConfig(seed=seed)
        graph = build_graph(program)
        records, params, _ = run_ncf(graph, train_events, eval_events, config,
                                     params=params)
        metrics = {}
        if any(r.task == "branch" for r in records):
            metrics.update(branch_metrics(records, instructions))
        if any(r.task == "prefetch" for r in records):
            metrics.update(prefetch_metrics(records))
    return records, metrics


# ------------------------------------------------------------------ reporting

def format_float(value):
    return repr(float(value))


def write_metrics_csv(path, rows):
    """rows: (predictor, task, metric, value)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["predictor", "task", "metric", "value"])
        for predictor, task, metric, value in rows:
            writer.writerow([predictor, task, metric, format_float(value)])


def write_records_csv(path, records):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seq", "pc", "task", "predicted", "actual", "correct"])
        for r in records:
            pred = "" if r.predicted is None else (
                int(r.predicted) if r.task == "branch" else f"0x{r.predicted:x}")
            actual = int(r.actual) if r.task == "branch" else f"0x{r.actual:x}"
            writer.writerow([r.seq, r.pc, r.task, pred, actual, int(r.correct)])


def write_manifest(path, config, seed):
    """Reproducibility record: config, seed, versions, backend.  No
    timestamps, keys sorted, so reruns are byte-identical."""
    from . import __version__

    try:
        import numba
        numba_version = numba.__version__
    except ImportError:
        numba_version = None

    manifest = {
        "config": config,
        "seed": seed,
        "backend": "numba" if kernels.use_numba() else "numpy",
        "versions": {
            "package": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "numba": numba_version,
        },
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def ensure_outdir(path):
    os.makedirs(path, exist_ok=True)
    return path
