"""Program corpus and deterministic workload builders.

The bundled corpus covers the dialect (loops, loads, stores, nested
loops, pointer chasing).  Builders here pair those programs with seeded
inputs and produce traces for the experiments: parametric loops for the
value-range studies, cyclic pointer chases and strided scans for the
address work, and five structurally distinct program classes (sort,
search, matmul, fib, walk) with register-renamed, constant-perturbed
variants for the classification study.
"""

from importlib import resources

import numpy as np

from .asm import REGISTERS, parse
from .tracer import execute


def corpus_dir():
    return resources.files("ncf") / "corpus"


def corpus_names():
    return sorted(p.name[:-2] for p in corpus_dir().iterdir()
                  if p.name.endswith(".s"))


def load_corpus(name):
    text = (corpus_dir() / f"{name}.s").read_text()
    return text, parse(text)


def trace_program(program, init_regs=None, init_mem=None, limit=1_000_000,
                  window=32, program_id=""):
    return execute(program, init_regs=init_regs, init_mem=init_mem,
                   limit=limit, window=window, program_id=program_id)


# ------------------------------------------------------------ corpus inputs

def _counting_inputs(k=5):
    mem = {0x100 + i: 7 * i + 3 for i in range(max(k, 1))}
    return {"rcx": k}, mem, 10_000


def _cycle(addresses, rng):
    """Map each address to the next along one random cycle."""
    order = rng.permutation(len(addresses))
    return {addresses[order[t]]: addresses[order[(t + 1) % len(order)]]
            for t in range(len(order))}


def _list_inputs(n_nodes=8, steps=12, seed=0, base=0x1000):
    rng = np.random.RandomState(seed)
    nodes = [base + 16 * i for i in range(n_nodes)]
    mem = dict(_cycle(nodes, rng).items())
    return {"rax": nodes[0], "rcx": steps}, mem, 100_000


def _chase_inputs(n_nodes=8, laps=3, seed=0, base=0x1000):
    rng = np.random.RandomState(seed)
    nodes = [base + 16 * i for i in range(n_nodes)]
    mem = {}
    for addr, nxt in _cycle(nodes, rng).items():
        mem[addr] = nxt
        mem[addr + 8] = int(rng.randint(1, 2 ** 30))
    return {"rax": nodes[0], "rsi": laps * n_nodes}, mem, 1_000_000


def _coord_inputs(grid=8, laps=24, seed=0, base=0x4000):
    """Random cycle over every (row, column) pair of a small grid.  Row
    pointers and column indices share one value band (base + 16*i) so the
    two address registers are only separable by their operand roles; the
    grid caps at 8 to keep record addresses disjoint."""
    if grid > 8:
        raise ValueError("grid chase supports at most 8x8 records")
    rng = np.random.RandomState(seed)
    coord = [base + 16 * i for i in range(grid)]
    pairs = [(a, b) for a in range(grid) for b in range(grid)]
    order = rng.permutation(len(pairs))
    mem = {}
    for t in range(len(order)):
        a, b = pairs[order[t]]
        na, nb = pairs[order[(t + 1) % len(order)]]
        addr = coord[a] + 8 * coord[b]
        mem[addr] = coord[na]
        mem[addr + 8] = coord[nb]
    a0, b0 = pairs[order[0]]
    regs = {"rcx": coord[a0], "rdx": coord[b0], "rsi": laps * len(pairs)}
    return regs, mem, 1_000_000


def _stride_inputs(laps=2, seed=0, base=0x10000):
    rng = np.random.RandomState(seed)
    mem = {base + 4 * t: int(rng.randint(1, 2 ** 30))
           for t in range(laps * 64)}
    return {"rbx": base, "rcx": 0, "rsi": laps * 64}, mem, 1_000_000


def _sort_inputs(n=8, seed=0, base=0x2000):
    rng = np.random.RandomState(seed)
    mem = {base + 8 * i: int(rng.randint(0, 1000)) for i in range(n)}
    return {"rbx": base, "rcx": n - 1}, mem, 1_000_000


def _search_inputs(n=8, seed=0, base=0x2000, hit=True):
    rng = np.random.RandomState(seed)
    vals = [int(rng.randint(0, 1000)) for _ in range(n)]
    target = vals[int(rng.randint(0, n))] if hit else 1001
    mem = {base + 8 * i: v for i, v in enumerate(vals)}
    return {"rbx": base, "rcx": n, "rdi": target}, mem, 100_000


def _matmul_inputs(n=3, seed=0):
    rng = np.random.RandomState(seed)
    mem = {}
    for base in (0x3000, 0x4000):
        for i in range(n * n):
            mem[base + 8 * i] = int(rng.randint(0, 50))
    for i in range(n * n):
        mem[0x5000 + 8 * i] = 0
    return {"rbx": 0x3000, "rsi": 0x4000, "rdi": 0x5000, "rcx": n}, mem, 1_000_000


CORPUS_INPUTS = {
    "counting_loop": _counting_inputs,
    "loop_k": lambda k=6: ({"rcx": k}, {}, 10_000),
    "straightline": lambda: ({}, {}, 100),
    "single_load": lambda: ({}, {0x108: 0xbeef}, 100),
    "list_walk": _list_inputs,
    "chase_pair": _chase_inputs,
    "coord_chase": _coord_inputs,
    "stride_scan": _stride_inputs,
    "bubble_sort": _sort_inputs,
    "linear_search": _search_inputs,
    "matmul": _matmul_inputs,
    "fib": lambda n=10: ({"rcx": n}, {}, 10_000),
}


def run_corpus(name, window=32, **kwargs):
    """Parse a corpus program and trace it on its canonical inputs."""
    _, program = load_corpus(name)
    init_regs, init_mem, limit = CORPUS_INPUTS[name](**kwargs)
    trace = trace_program(program, init_regs, init_mem, limit=limit,
                          window=window, program_id=name)
    return program, trace


# ------------------------------------------------------- experiment workloads

def loop_trace(k, window=32):
    """Branch-only loop running exactly k iterations."""
    _, program = load_corpus("loop_k")
    trace = trace_program(program, {"rcx": k}, {}, limit=100_000,
                          window=window, program_id=f"loop_k_{k}")
    return program, trace


def counting_trace(k, window=32):
    _, program = load_corpus("counting_loop")
    init_regs, init_mem, limit = _counting_inputs(k)
    trace = trace_program(program, init_regs, init_mem, limit=limit,
                          window=window, program_id=f"counting_{k}")
    return program, trace


def chase_pair_trace(n_nodes=64, laps=40, seed=0, window=None):
    """Cyclic two-load pointer chase.  The window defaults to holding the
    whole cycle so revisits always hit."""
    _, program = load_corpus("chase_pair")
    init_regs, init_mem, limit = _chase_inputs(n_nodes, laps, seed)
    if window is None:
        window = 2 * n_nodes + 8
    trace = trace_program(program, init_regs, init_mem, limit=limit,
                          window=window,
                          program_id=f"chase_{n_nodes}_{laps}_{seed}")
    return program, trace


def coord_chase_trace(grid=8, laps=24, seed=0, window=32):
    """Grid-coordinate pointer chase.  The default window holds far less
    than one lap of record words, so revisits never hit and next addresses
    have to come from the coordinate registers."""
    _, program = load_corpus("coord_chase")
    init_regs, init_mem, limit = _coord_inputs(grid, laps, seed)
    trace = trace_program(program, init_regs, init_mem, limit=limit,
                          window=window,
                          program_id=f"coord_{grid}_{laps}_{seed}")
    return program, trace


def stride_scan_trace(laps=20, seed=0, window=32):
    _, program = load_corpus("stride_scan")
    init_regs, init_mem, limit = _stride_inputs(laps, seed)
    trace = trace_program(program, init_regs, init_mem, limit=limit,
                          window=window, program_id=f"stride_{laps}_{seed}")
    return program, trace


def indexed_scan_program(scale, step):
    """Scan with explicit scale: address = base + scale*index, index
    advancing by `step`, 64 iterations per stripe."""
    return parse(f"""
loop:   mov 0x0(%rbx,%rcx,{scale}), %rax
        add ${step}, %rcx
        cmp $64, %rcx
        jl cont
        sub $64, %rcx
        add ${64 * scale}, %rbx
cont:   sub $1, %rsi
        cmp $0, %rsi
        jg loop
        halt
""")


def indexed_scan_trace(scale=4, step=1, laps=10, seed=0, window=32):
    rng = np.random.RandomState(seed)
    base = 0x10000
    iters = laps * 64
    program = indexed_scan_program(scale, step)
    mem = {}
    idx, stripe = 0, base
    for _ in range(int(iters)):
        mem[stripe + scale * idx] = int(rng.randint(1, 2 ** 30))
        idx += step
        if idx >= 64:
            idx -= 64
            stripe += 64 * scale
    init_regs = {"rbx": base, "rcx": 0, "rsi": int(iters)}
    trace = trace_program(program, init_regs, mem, limit=1_000_000,
                          window=window,
                          program_id=f"iscan_{scale}_{step}_{laps}_{seed}")
    return program, trace


# --------------------------------------------------------- program classes

CLASSES = ("sort", "search", "matmul", "fib", "walk")

_CLASS_TEMPLATES = {
    "sort": """
        mov $0, %{p}
outer:  cmp %{n}, %{p}
        jge done
        mov $0, %{i}
inner:  mov %{n}, %{l}
        sub %{p}, %{l}
        cmp %{l}, %{i}
        jge next
        mov 0x0(%{x},%{i},8), %{a}
        mov 0x8(%{x},%{i},8), %{b}
        cmp %{a}, %{b}
        jge keep
        mov %{b}, 0x0(%{x},%{i},8)
        mov %{a}, 0x8(%{x},%{i},8)
keep:   add $1, %{i}
        jmp inner
next:   add $1, %{p}
        jmp outer
done:   halt
""",
    "search": """
        mov $0, %{i}
loop:   cmp %{n}, %{i}
        jge missing
        mov 0x0(%{x},%{i},8), %{v}
        cmp %{t}, %{v}
        je found
        add $1, %{i}
        jmp loop
found:  mov %{i}, %{r}
        halt
missing: mov $-1, %{r}
        halt
""",
    "matmul": """
        mov $0, %{i}
li:     cmp %{n}, %{i}
        jge done
        mov $0, %{j}
lj:     cmp %{n}, %{j}
        jge ni
        mov $0, %{k}
        mov $0, %{s}
lk:     cmp %{n}, %{k}
        jge store
        mov %{i}, %{u}
        imul %{n}, %{u}
        add %{k}, %{u}
        mov 0x0(%{x},%{u},8), %{a}
        mov %{k}, %{w}
        imul %{n}, %{w}
        add %{j}, %{w}
        mov 0x0(%{y},%{w},8), %{b}
        imul %{b}, %{a}
        add %{a}, %{s}
        add $1, %{k}
        jmp lk
store:  mov %{i}, %{u}
        imul %{n}, %{u}
        add %{j}, %{u}
        mov %{s}, 0x0(%{z},%{u},8)
        add $1, %{j}
        jmp lj
ni:     add $1, %{i}
        jmp li
done:   halt
""",
    "fib": """
        mov $0, %{a}
        mov $1, %{b}
        mov $0, %{i}
loop:   cmp %{n}, %{i}
        jge done
        mov %{b}, %{t}
        add %{a}, %{t}
        mov %{b}, %{a}
        mov %{t}, %{b}
        add $1, %{i}
        jmp loop
done:   halt
""",
    "walk": """
        mov $0, %{i}
loop:   cmp %{n}, %{i}
        jge exit
        mov 0x0(%{a}), %{a}
        add $1, %{i}
        jmp loop
exit:   halt
""",
}

_CLASS_SLOTS = {
    "sort": ("p", "n", "i", "l", "x", "a", "b"),
    "search": ("i", "n", "x", "v", "t", "r"),
    "matmul": ("i", "j", "k", "s", "u", "w", "a", "b", "n", "x", "y", "z"),
    "fib": ("a", "b", "i", "t", "n"),
    "walk": ("i", "n", "a"),
}


def class_variant(cls, variant):
    """One seeded variant of a program class: renamed registers, a short
    random prologue, and perturbed sizes/contents.  Returns the parsed
    program with its initial registers, memory, and step limit."""
    if cls not in CLASSES:
        raise ValueError(f"unknown class {cls!r}")
    rng = np.random.RandomState(1000 * CLASSES.index(cls) + variant)
    slots = _CLASS_SLOTS[cls]
    regs = list(REGISTERS)
    rng.shuffle(regs)
    names = dict(zip(slots, regs))
    free = regs[len(slots):]
    prologue = "".join(
        f"        mov ${int(rng.randint(0, 256))}, %{free[j]}\n"
        for j in range(int(rng.randint(0, 3))))
    text = prologue + _CLASS_TEMPLATES[cls].format(**names)
    program = parse(text)

    if cls == "sort":
        n = 6 + int(rng.randint(0, 7))
        base = 0x2000 + 16 * int(rng.randint(0, 64))
        mem = {base + 8 * i: int(rng.randint(0, 1000)) for i in range(n)}
        init = {names["x"]: base, names["n"]: n - 1}
    elif cls == "search":
        n = 8 + int(rng.randint(0, 9))
        base = 0x2000 + 16 * int(rng.randint(0, 64))
        vals = [int(rng.randint(0, 1000)) for _ in range(n)]
        target = vals[int(rng.randint(0, n))] if rng.rand() < 0.7 else 2000
        mem = {base + 8 * i: v for i, v in enumerate(vals)}
        init = {names["x"]: base, names["n"]: n, names["t"]: target}
    elif cls == "matmul":
        n = 2 + int(rng.randint(0, 3))
        bases = (0x3000, 0x4000, 0x5000)
        mem = {}
        for b in bases[:2]:
            for i in range(n * n):
                mem[b + 8 * i] = int(rng.randint(0, 50))
        for i in range(n * n):
            mem[bases[2] + 8 * i] = 0
        init = {names["x"]: bases[0], names["y"]: bases[1],
                names["z"]: bases[2], names["n"]: n}
    elif cls == "fib":
        init = {names["n"]: 5 + int(rng.randint(0, 26))}
        mem = {}
    else:  # walk
        n_nodes = 8 + int(rng.randint(0, 25))
        base = 0x1000 + 16 * int(rng.randint(0, 64))
        nodes = [base + 16 * i for i in range(n_nodes)]
        mem = dict(_cycle(nodes, rng).items())
        init = {names["a"]: nodes[0], names["n"]: 20 + int(rng.randint(0, 41))}
    return program, init, mem, 200_000


def class_trace(cls, variant, window=32):
    program, init_regs, init_mem, limit = class_variant(cls, variant)
    trace = trace_program(program, init_regs, init_mem, limit=limit,
                          window=window, program_id=f"{cls}_{variant}")
    return program, trace
