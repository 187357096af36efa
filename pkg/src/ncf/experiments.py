"""Experiment drivers: value-representation generalization, loop-exit
comparison, graph ablation, propagation-step sweep, and program
classification from learned embeddings.

Every driver is deterministic for a fixed seed, returns its results as
plain dicts/lists, and (when given an output directory) writes CSV
tables plus a JSON run manifest.
"""

import os

import numpy as np

from . import baselines, evalkit, ggnn, suites
from .graph import build_graph


def _merge(defaults, overrides):
    cfg = dict(defaults)
    for key, value in (overrides or {}).items():
        if key not in cfg:
            raise ValueError(f"unknown config key {key!r}")
        cfg[key] = type(cfg[key])(value) if cfg[key] is not None else value
    return cfg


# ------------------------------------------------------- generalization study

REPRESENTATIONS = ("categorical", "scalar", "binary")

GENERALIZATION_DEFAULTS = {
    "train_k_start": 1, "train_k_stop": 37, "train_k_step": 3,
    "test_k_max": 80,
    "mlp_epochs": 1200, "mlp_lr": 0.003, "mlp_l2": 1e-4, "mlp_batch": 32,
    "ncf_epochs": 120, "ncf_lr": 0.0005, "ncf_head_lr": 0.3,
    "ncf_batch": 32, "ncf_steps": 3, "ncf_d": 64, "ncf_balance": 1,
}


def loop_counter_features(events, representation, limit=80):
    """(i, k) feature rows for the loop's branch events, read straight
    from the snapshots.  Fixed 1..limit value range: one-hot pairs
    (2*limit wide), scaled pairs (2 wide), or 7-bit pairs (14 wide)."""
    pairs = [(ev.regs["rax"], ev.regs["rcx"]) for ev in events
             if ev.kind == "branch"]
    labels = np.array([float(ev.taken) for ev in events if ev.kind == "branch"])
    if representation == "categorical":
        rows = np.zeros((len(pairs), 2 * limit))
        for r, (i, k) in enumerate(pairs):
            rows[r, i - 1] = 1.0
            rows[r, limit + k - 1] = 1.0
    elif representation == "scalar":
        rows = np.array([[i / limit, k / limit] for i, k in pairs])
    elif representation == "binary":
        width = 7
        rows = np.zeros((len(pairs), 2 * width))
        for r, (i, k) in enumerate(pairs):
            for b in range(width):
                rows[r, b] = (i >> (width - 1 - b)) & 1
                rows[r, width + b] = (k >> (width - 1 - b)) & 1
    else:
        raise ValueError(f"unknown representation {representation!r}")
    return rows, labels


def run_generalization(seed=0, outdir=None, overrides=None):
    """Train on loops with k in an arithmetic subset, test on k = 1..max.

    Part one fits one-hidden-layer MLPs on (i, k) under each value
    representation and reports, per k, whether every branch of that
    loop is predicted correctly.  Part two trains the graph model on
    the same training loops and scores the exit iteration of held-out
    loops against the online counter and perceptron predictors.
    """
    cfg = _merge(GENERALIZATION_DEFAULTS, overrides)
    train_ks = list(range(cfg["train_k_start"], cfg["train_k_stop"] + 1,
                          cfg["train_k_step"]))
    test_ks = list(range(1, cfg["test_k_max"] + 1))
    traces = {k: suites.loop_trace(k)[1] for k in test_ks}
    program = suites.loop_trace(1)[0]

    correct = {}
    for rep in REPRESENTATIONS:
        xs, ys = [], []
        for k in train_ks:
            x, y = loop_counter_features(traces[k].events, rep,
                                         cfg["test_k_max"])
            xs.append(x)
            ys.append(y)
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        mlp = baselines.Mlp([x.shape[1], 2 * x.shape[1], 1], seed=seed,
                            l2=cfg["mlp_l2"])
        mlp.fit(x, y, epochs=cfg["mlp_epochs"], lr=cfg["mlp_lr"],
                batch_size=cfg["mlp_batch"], seed=seed, optimizer="adam")
        per_k = {}
        for k in test_ks:
            xk, yk = loop_counter_features(traces[k].events, rep,
                                           cfg["test_k_max"])
            preds = mlp.predict_proba(xk) >= 0.5
            per_k[k] = bool(np.all(preds == (yk > 0.5)))
        correct[rep] = per_k

    graph = build_graph(program)
    train_cfg = ggnn.TrainConfig(
        steps=cfg["ncf_steps"], d=cfg["ncf_d"], lr=cfg["ncf_lr"],
        head_lr=cfg["ncf_head_lr"], epochs=cfg["ncf_epochs"],
        batch_size=cfg["ncf_batch"], seed=seed,
        encoding="binary", tasks=("branch",))
    datasets = []
    for k in train_ks:
        ds = ggnn.compile_dataset(graph, traces[k].events, ("branch",))
        if cfg["ncf_balance"]:
            # one taken exit per loop: reweight so both outcomes matter
            pos = ds.y == 1.0
            if pos.any() and (~pos).any():
                ds.weights[pos] = (~pos).sum() / pos.sum()
        datasets.append(ds)
    result = ggnn.train(datasets, train_cfg)

    exit_rows = []
    for k in test_ks:
        events = [ev for ev in traces[k].events if ev.kind == "branch"]
        ds = ggnn.compile_dataset(graph, events, ("branch",))
        probs, _ = ggnn.predict_dataset(result.params, ds, result.enc,
                                        train_cfg.steps)
        ncf_exit = bool((probs[-1] >= 0.5) == events[-1].taken)
        row = {"k": k, "held_out": k not in train_ks, "ncf": ncf_exit}
        for name, predictor in (("bimodal", baselines.Bimodal()),
                                ("perceptron", baselines.Perceptron())):
            records = evalkit.run_branch_counter(events, 0, predictor)
            row[name] = bool(records[-1].correct)
        exit_rows.append(row)

    results = {
        "train_ks": train_ks,
        "correct": correct,
        "counts": {rep: sum(correct[rep].values()) for rep in REPRESENTATIONS},
        "exit_rows": exit_rows,
        "config": cfg,
    }
    if outdir:
        evalkit.ensure_outdir(outdir)
        rows = [(rep, "branch", f"all_correct_k_{k}", float(correct[rep][k]))
                for rep in REPRESENTATIONS for k in test_ks]
        rows += [(rep, "branch", "fully_correct_count",
                  float(results["counts"][rep])) for rep in REPRESENTATIONS]
        evalkit.write_metrics_csv(os.path.join(outdir, "generalization.csv"), rows)
        exit_csv = [(name, "branch", f"exit_correct_k_{r['k']}", float(r[name]))
                    for r in exit_rows for name in ("ncf", "bimodal", "perceptron")]
        evalkit.write_metrics_csv(os.path.join(outdir, "loop_exit.csv"), exit_csv)
        evalkit.write_manifest(os.path.join(outdir, "manifest.json"), cfg, seed)
    return results


# ---------------------------------------------------------------- ablation

ABLATION_DEFAULTS = {
    "grid": 8, "laps": 24, "seeds": 2,
    "epochs": 30, "lr": 0.01, "head_lr": 0.3, "batch": 64, "steps": 3, "d": 64,
}


def _ablation_suite(cfg, seed):
    # grid chase: the address registers share a value band, so only the
    # operand-role structure tells row from column
    suite = []
    for j in range(cfg["seeds"]):
        program, trace = suites.coord_chase_trace(
            grid=cfg["grid"], laps=cfg["laps"], seed=seed + j)
        suite.append((program, trace))
    return suite


def _eval_mode(suite, mode, cfg, seed):
    """Train one model per trace in the given graph mode; pool eval-region
    branch and prefetch records."""
    branch_correct, branch_total = 0, 0
    pf_correct, pf_total = 0, 0
    for program, trace in suite:
        graph = build_graph(program, mode=mode)
        train_events, eval_events = evalkit.split_events(trace.events)
        train_cfg = ggnn.TrainConfig(
            steps=cfg["steps"], d=cfg["d"], lr=cfg["lr"],
            head_lr=cfg["head_lr"], epochs=cfg["epochs"],
            batch_size=cfg["batch"], seed=seed,
            encoding="binary", tasks=("branch", "prefetch"))
        records, _, _ = evalkit.run_ncf(graph, train_events, eval_events,
                                        train_cfg)
        for r in records:
            if r.task == "branch":
                branch_total += 1
                branch_correct += int(r.correct)
            else:
                pf_total += 1
                pf_correct += int(r.correct)
    return {
        "branch_accuracy": branch_correct / max(branch_total, 1),
        "prefetch_complete_accuracy": pf_correct / max(pf_total, 1),
        "branch_predictions": branch_total,
        "prefetch_predictions": pf_total,
    }


def run_ablation(seed=0, outdir=None, overrides=None):
    """Same grid-chase suite, same seeds/config, two graph modes."""
    cfg = _merge(ABLATION_DEFAULTS, overrides)
    suite = _ablation_suite(cfg, seed + 1)
    full = _eval_mode(suite, "full", cfg, seed)
    ablated = _eval_mode(suite, "src-tgt-only", cfg, seed)
    results = {
        "full": full,
        "src-tgt-only": ablated,
        "prefetch_delta": full["prefetch_complete_accuracy"]
        - ablated["prefetch_complete_accuracy"],
        "branch_delta": full["branch_accuracy"] - ablated["branch_accuracy"],
        "config": cfg,
    }
    if outdir:
        evalkit.ensure_outdir(outdir)
        rows = []
        for mode, metrics in (("full", full), ("src-tgt-only", ablated)):
            for metric, value in sorted(metrics.items()):
                task = "branch" if metric.startswith("branch") else "prefetch"
                rows.append((f"ncf-{mode}", task, metric, value))
        rows.append(("delta", "prefetch", "prefetch_delta", results["prefetch_delta"]))
        rows.append(("delta", "branch", "branch_delta", results["branch_delta"]))
        evalkit.write_metrics_csv(os.path.join(outdir, "ablation.csv"), rows)
        evalkit.write_manifest(os.path.join(outdir, "manifest.json"), cfg, seed)
    return results


# ------------------------------------------------------------- prop sweep

PROP_SWEEP_DEFAULTS = {
    "n_nodes": 32, "laps": 16, "t_values": "1,2,3,4,5,6,7,8",
    "epochs": 12, "lr": 0.01, "head_lr": 0.3, "batch": 64, "d": 64,
}


def run_prop_sweep(seed=0, outdir=None, overrides=None):
    """One model per propagation depth T on a fixed pointer-chase trace."""
    cfg = _merge(PROP_SWEEP_DEFAULTS, overrides)
    t_values = [int(t) for t in str(cfg["t_values"]).split(",")]
    program, trace = suites.chase_pair_trace(n_nodes=cfg["n_nodes"],
                                             laps=cfg["laps"], seed=seed + 1)
    graph = build_graph(program)
    train_events, eval_events = evalkit.split_events(trace.events)
    instructions = evalkit.region_instructions(trace, eval_events[0])
    rows = []
    for t in t_values:
        train_cfg = ggnn.TrainConfig(
            steps=t, d=cfg["d"], lr=cfg["lr"], head_lr=cfg["head_lr"],
            epochs=cfg["epochs"], batch_size=cfg["batch"], seed=seed,
            encoding="binary", tasks=("branch", "prefetch"))
        records, _, _ = evalkit.run_ncf(graph, train_events, eval_events,
                                        train_cfg)
        row = {"steps": t}
        row.update(evalkit.branch_metrics(records, instructions))
        row.update(evalkit.prefetch_metrics(records))
        rows.append(row)
    results = {"rows": rows, "config": cfg}
    if outdir:
        evalkit.ensure_outdir(outdir)
        csv_rows = []
        for row in rows:
            csv_rows.append(("ncf", "prefetch",
                             f"complete_accuracy_T_{row['steps']}",
                             row["prefetch_complete_accuracy"]))
            csv_rows.append(("ncf", "branch", f"mpki_T_{row['steps']}",
                             row["branch_mpki"]))
        evalkit.write_metrics_csv(os.path.join(outdir, "prop_sweep.csv"), csv_rows)
        evalkit.write_manifest(os.path.join(outdir, "manifest.json"), cfg, seed)
    return results


# ------------------------------------------------------------ classification

CLASSIFY_DEFAULTS = {
    "variants": 50, "train_per_class": 30, "val_per_class": 10,
    "pretrain_variants": 3, "pretrain_epochs": 8, "pretrain_batch": 64,
    "pretrain_samples": 160, "embed_events": 192,
    "lr": 0.01, "head_lr": 0.3, "steps": 5, "d": 64,
    "svm_epochs": 600, "svm_lr": 0.05, "svm_l2": 0.01,
}


def _sample_events(events, cap, rng=None):
    """Deterministic even subsample keeping chronological order."""
    if len(events) <= cap:
        return list(events)
    idx = np.linspace(0, len(events) - 1, cap).astype(int)
    return [events[i] for i in idx]


def run_classify(seed=0, outdir=None, overrides=None):
    """Branch-pretrain on a few variants per class, embed every variant,
    then fit the linear squared-hinge classifier on the embeddings."""
    cfg = _merge(CLASSIFY_DEFAULTS, overrides)
    classes = suites.CLASSES
    n_var = cfg["variants"]

    pretrain_sets = []
    for cls in classes:
        for variant in range(cfg["pretrain_variants"]):
            program, trace = suites.class_trace(cls, variant)
            events = _sample_events(
                [ev for ev in trace.events if ev.kind == "branch"],
                cfg["pretrain_samples"])
            graph = build_graph(program)
            ds = ggnn.compile_dataset(graph, events, ("branch",))
            if len(ds):
                pretrain_sets.append(ds)
    train_cfg = ggnn.TrainConfig(
        steps=cfg["steps"], d=cfg["d"], lr=cfg["lr"],
        head_lr=cfg["head_lr"], epochs=cfg["pretrain_epochs"],
        batch_size=cfg["pretrain_batch"], seed=seed,
        encoding="binary", tasks=("branch",))
    result = ggnn.train(pretrain_sets, train_cfg)

    embeddings = np.zeros((len(classes) * n_var, cfg["d"]))
    labels = np.zeros(len(classes) * n_var, dtype=np.int64)
    for c, cls in enumerate(classes):
        for variant in range(n_var):
            program, trace = suites.class_trace(cls, variant)
            events = _sample_events(list(trace.events), cfg["embed_events"])
            graph = build_graph(program)
            row = c * n_var + variant
            embeddings[row] = ggnn.export_embedding(
                result.params, graph, events, result.enc, cfg["steps"])
            labels[row] = c

    rng = np.random.RandomState(seed + 7)
    train_idx, val_idx, test_idx = [], [], []
    for c in range(len(classes)):
        order = rng.permutation(n_var) + c * n_var
        train_idx.extend(order[:cfg["train_per_class"]])
        val_idx.extend(order[cfg["train_per_class"]:
                             cfg["train_per_class"] + cfg["val_per_class"]])
        test_idx.extend(order[cfg["train_per_class"] + cfg["val_per_class"]:])

    def fit_score(y):
        clf = baselines.LinearClassifier(cfg["d"], len(classes),
                                         l2=cfg["svm_l2"], seed=seed)
        clf.fit(embeddings[train_idx], y[train_idx],
                epochs=cfg["svm_epochs"], lr=cfg["svm_lr"])
        val = float(np.mean(clf.predict(embeddings[val_idx]) == y[val_idx]))
        test = float(np.mean(clf.predict(embeddings[test_idx]) == y[test_idx]))
        return val, test

    val_acc, test_acc = fit_score(labels)
    shuffled = labels.copy()
    rng.shuffle(shuffled)
    _, shuffled_acc = fit_score(shuffled)

    results = {
        "val_accuracy": val_acc,
        "test_accuracy": test_acc,
        "shuffled_test_accuracy": shuffled_acc,
        "chance": 1.0 / len(classes),
        "config": cfg,
    }
    if outdir:
        evalkit.ensure_outdir(outdir)
        rows = [("ncf-svm", "classify", "test_accuracy", test_acc),
                ("ncf-svm", "classify", "val_accuracy", val_acc),
                ("shuffled", "classify", "test_accuracy", shuffled_acc)]
        evalkit.write_metrics_csv(os.path.join(outdir, "classify.csv"), rows)
        evalkit.write_manifest(os.path.join(outdir, "manifest.json"), cfg, seed)
    return results


EXPERIMENTS = {
    "generalization": run_generalization,
    "ablation": run_ablation,
    "prop-sweep": run_prop_sweep,
    "classify": run_classify,
}
