"""Command-line interface, run in process through main()."""

import json

import pytest

from ncf import cli
from ncf.suites import load_corpus
from ncf.tracer import read_trace


COUNTING = load_corpus("counting_loop")[0]

TINY_LOOP = """\
loop: mov 0x100(%rax), %rbx
      cmp $2, %rax
      je done
      add $1, %rax
      jmp loop
done: halt
"""


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "prog.s").write_text(COUNTING)
    (tmp_path / "tiny.s").write_text(TINY_LOOP)
    return tmp_path


def run(argv):
    return cli.main([str(a) for a in argv])


# --------------------------------------------------------------------- parse

def test_parse_prints_program(workdir, capsys):
    assert run(["parse", workdir / "prog.s"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("mov $0x0, %rax\n")
    assert "jge 6" in out


def test_parse_json(workdir, capsys):
    assert run(["parse", workdir / "prog.s", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert [row["kind"] for row in doc[:3]] == [
        "move-reg", "compare", "cond-branch"]
    assert doc[2]["target"] == 6


def test_parse_error_exits_2(workdir, capsys):
    bad = workdir / "bad.s"
    bad.write_text("frobnicate %rax\n")
    assert run(["parse", bad]) == 2
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert "line 1" in err


# --------------------------------------------------------------------- trace

def test_trace_corpus(workdir, capsys):
    out = workdir / "trace.jsonl"
    assert run(["trace", "--corpus", "counting_loop", "--out", out]) == 0
    assert "11 events, 29 instructions" in capsys.readouterr().out
    trace = read_trace(out)
    assert len(trace.events) == 11
    assert trace.program_id == "counting_loop"


def test_trace_with_initial_state(workdir):
    out = workdir / "tiny.jsonl"
    code = run(["trace", workdir / "tiny.s",
                "--set-reg", "rax=0",
                "--set-mem", "0x100=7", "--set-mem", "0x101=8",
                "--set-mem", "0x102=9",
                "--out", out])
    assert code == 0
    trace = read_trace(out)
    assert len(trace.events) == 6
    assert trace.total_instr == 14


def test_trace_needs_program_or_corpus(workdir, capsys):
    assert run(["trace", "--out", workdir / "x.jsonl"]) == 2
    assert "error:" in capsys.readouterr().err


def test_trace_bad_assignment(workdir, capsys):
    code = run(["trace", workdir / "tiny.s", "--set-reg", "rax",
                "--out", workdir / "x.jsonl"])
    assert code == 2


# --------------------------------------------------------------------- graph

def test_graph_dump(workdir, capsys):
    out = workdir / "g.json"
    assert run(["graph", workdir / "prog.s", "--out", out]) == 0
    assert "26 nodes, 64 edges" in capsys.readouterr().out
    doc = json.loads(out.read_text())
    assert doc["mode"] == "full"
    assert len(doc["nodes"]) == 26
    assert {"branch_task_nodes", "prefetch_task_nodes"} <= set(doc)


def test_graph_neighborhood(workdir):
    out = workdir / "g2.json"
    assert run(["graph", workdir / "prog.s", "--node", "2",
                "--radius", "1", "--out", out]) == 0
    doc = json.loads(out.read_text())
    assert 0 < len(doc["nodes"]) < 26


def test_graph_bad_node(workdir, capsys):
    code = run(["graph", workdir / "prog.s", "--node", "999",
                "--out", workdir / "g3.json"])
    assert code == 2


# ---------------------------------------------------------------- train/eval

@pytest.fixture
def traced(workdir):
    out = workdir / "trace.jsonl"
    assert run(["trace", "--corpus", "counting_loop", "--out", out]) == 0
    return workdir, out


def train_args(workdir, trace, outdir):
    return ["train", "--program", workdir / "prog.s", "--trace", trace,
            "--epochs", "2", "--d", "8", "--steps", "2", "--out", outdir]


def test_train_writes_outputs(traced, capsys):
    workdir, trace = traced
    outdir = workdir / "run"
    assert run(train_args(workdir, trace, outdir)) == 0
    assert "trained 7 samples" in capsys.readouterr().out
    assert (outdir / "checkpoint.bin").is_file()
    history = (outdir / "history.csv").read_text()
    assert history.startswith("epoch,loss\n0,")
    manifest = json.loads((outdir / "manifest.json").read_text())
    assert manifest["config"]["epochs"] == 2
    assert manifest["config"]["d"] == 8


def test_train_reruns_are_byte_identical(traced):
    workdir, trace = traced
    first = workdir / "run1"
    second = workdir / "run2"
    assert run(train_args(workdir, trace, first)) == 0
    assert run(train_args(workdir, trace, second)) == 0
    for name in ("checkpoint.bin", "history.csv", "manifest.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_eval_bimodal(traced, capsys):
    workdir, trace = traced
    outdir = workdir / "ev"
    code = run(["eval", "--program", workdir / "prog.s", "--trace", trace,
                "--predictor", "bimodal", "--out", outdir])
    assert code == 0
    assert "bimodal branch_accuracy = 0.5" in capsys.readouterr().out
    assert (outdir / "metrics.csv").is_file()
    assert (outdir / "records.csv").is_file()
    manifest = json.loads((outdir / "manifest.json").read_text())
    assert manifest["config"]["predictor"] == "bimodal"


def test_eval_ncf_from_checkpoint(traced, capsys):
    workdir, trace = traced
    rundir = workdir / "run"
    assert run(train_args(workdir, trace, rundir)) == 0
    capsys.readouterr()
    code = run(["eval", "--program", workdir / "prog.s", "--trace", trace,
                "--predictor", "ncf", "--checkpoint",
                rundir / "checkpoint.bin",
                "--epochs", "2", "--d", "8", "--steps", "2",
                "--out", workdir / "ev2"])
    assert code == 0
    out = capsys.readouterr().out
    assert "ncf branch_accuracy" in out


def test_eval_config_file_overrides(traced, capsys):
    workdir, trace = traced
    cfg = workdir / "train.cfg"
    cfg.write_text("epochs = 2  # short run\nd = 8\nsteps = 2\n")
    outdir = workdir / "ev3"
    code = run(["eval", "--program", workdir / "prog.s", "--trace", trace,
                "--predictor", "ncf", "--config", cfg, "--out", outdir])
    assert code == 0
    manifest = json.loads((outdir / "manifest.json").read_text())
    assert manifest["config"]["epochs"] == 2


def test_eval_rejects_unknown_predictor(traced, capsys):
    workdir, trace = traced
    with pytest.raises(SystemExit):
        run(["eval", "--program", workdir / "prog.s", "--trace", trace,
             "--predictor", "tage", "--out", workdir / "x"])


def test_eval_missing_checkpoint(traced, capsys):
    workdir, trace = traced
    code = run(["eval", "--program", workdir / "prog.s", "--trace", trace,
                "--predictor", "ncf", "--checkpoint", workdir / "nope.bin",
                "--out", workdir / "x"])
    assert code == 2


# ---------------------------------------------------------------- experiment

def test_experiment_with_config(workdir, capsys):
    cfg = workdir / "exp.cfg"
    cfg.write_text("n_nodes = 8\nlaps = 3\nt_values = 1,2\n"
                   "epochs = 1\nd = 8\nbatch = 16\n")
    outdir = workdir / "expo"
    code = run(["experiment", "prop-sweep", "--config", cfg, "--out", outdir])
    assert code == 0
    assert f"reports -> {outdir}" in capsys.readouterr().out
    assert (outdir / "prop_sweep.csv").is_file()
    assert (outdir / "manifest.json").is_file()


def test_experiment_rejects_unknown_name(workdir):
    with pytest.raises(SystemExit):
        run(["experiment", "warp-drive", "--out", workdir / "x"])


def test_experiment_bad_config_key(workdir, capsys):
    cfg = workdir / "exp.cfg"
    cfg.write_text("warp = 9\n")
    code = run(["experiment", "prop-sweep", "--config", cfg,
                "--out", workdir / "x"])
    assert code == 2
    assert "unknown config key" in capsys.readouterr().err


# --------------------------------------------------------------------- bench

def test_bench_smoke(capsys):
    code = run(["bench", "--nodes", "30", "--edges", "40", "--d", "8",
                "--steps", "2", "--repeats", "1"])
    assert code == 0
    out = capsys.readouterr().out
    assert "backend" in out
    assert "numpy" in out


# ----------------------------------------------------------------- config IO

def test_load_config(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("a = 1\n# only a comment\nb = x,y  # trailing\n\n")
    assert cli.load_config(path) == {"a": "1", "b": "x,y"}


def test_load_config_rejects_bad_line(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("novalue\n")
    with pytest.raises(ValueError, match="1"):
        cli.load_config(path)
