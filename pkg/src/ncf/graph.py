"""Fused static/dynamic program graphs.

One graph per program.  Instruction nodes carry the static control-flow
structure; each operand hangs under its instruction as a small tree of
pseudo nodes (the operand's role and addressing parts) with variable
nodes (registers and constants) at the leaves.  Usage edges connect each
register occurrence to the occurrences that reach it, computed by a
reaching-definitions pass where both reads and writes of a register kill
earlier occurrences.  Every edge type also gets a reversed twin so
information can flow both ways during propagation.

Per dynamic event the same graph is re-valued: register leaves take the
snapshot's register file, constants their literal, memory pseudo nodes
the value behind their effective address if it sits in the snapshot's
recency window (else a missing flag).  Instruction nodes carry no value.
"""

from dataclasses import dataclass, field
import json

import numpy as np

from .asm import Imm, Reg, Mem, MASK64, branch_successors

NODE_MAJORS = ("instruction", "variable", "pseudo")

VARIABLE_SUBS = ("reg", "const")

PSEUDO_SUBS = (
    "non-mem-src", "mem-src", "non-mem-tgt", "mem-tgt",
    "base", "ind-base", "offset",
)

# fixed embedding-table order for all value-carrying sub-types
SUBTYPES = VARIABLE_SUBS + PSEUDO_SUBS

EDGE_TYPES = (
    "control-flow", "parent", "usage",
    "control-flow-rev", "parent-rev", "usage-rev",
)

GRAPH_MODES = ("full", "src-tgt-only")


class GraphError(Exception):
    pass


@dataclass(frozen=True)
class Node:
    idx: int
    major: str
    sub: str | None
    instr: int  # owning instruction index
    reg: str | None = None  # bound register name (variable/reg)
    const: int | None = None  # bound literal (variable/const), as written


@dataclass(frozen=True)
class FusedGraph:
    mode: str
    nodes: tuple
    edges: dict  # edge type -> tuple of (src, dst) node-id pairs
    children: dict  # node id -> tuple of child node ids, creation order
    mem_operands: dict  # mem pseudo node id -> Mem operand
    branch_task_nodes: dict  # instruction index -> instruction node id
    prefetch_task_nodes: dict  # instruction index -> mem-src pseudo node id
    orig_ids: tuple = ()  # for neighborhood subgraphs: new id -> source id

    def __len__(self):
        return len(self.nodes)

    def n_edges(self):
        return sum(len(v) for v in self.edges.values())


def _operand_roles(ins):
    """Operands paired with their dataflow role at this instruction."""
    if ins.kind in ("move-load", "move-store", "move-reg"):
        return ((ins.operands[0], "src"), (ins.operands[1], "tgt"))
    if ins.kind == "arith":
        if ins.mnemonic == "inc":
            return ((ins.operands[0], "tgt"),)
        return ((ins.operands[0], "src"), (ins.operands[1], "tgt"))
    if ins.kind == "compare":
        return ((ins.operands[0], "src"), (ins.operands[1], "src"))
    return ()


class _Builder:
    def __init__(self, mode):
        self.mode = mode
        self.nodes = []
        self.children = {}
        self.mem_operands = {}
        self.parent_edges = []

    def add(self, major, sub, instr, parent=None, reg=None, const=None):
        node = Node(len(self.nodes), major, sub, instr, reg=reg, const=const)
        self.nodes.append(node)
        self.children[node.idx] = []
        if parent is not None:
            self.parent_edges.append((node.idx, parent))
            self.children[parent].append(node.idx)
        return node.idx

    def add_operand(self, op, role, instr, parent):
        if isinstance(op, Imm):
            pseudo = self.add("pseudo", f"non-mem-{role}", instr, parent)
            self.add("variable", "const", instr, pseudo, const=op.value)
            return pseudo
        if isinstance(op, Reg):
            pseudo = self.add("pseudo", f"non-mem-{role}", instr, parent)
            self.add("variable", "reg", instr, pseudo, reg=op.name)
            return pseudo
        pseudo = self.add("pseudo", f"mem-{role}", instr, parent)
        self.mem_operands[pseudo] = op
        if self.mode == "full":
            offset = self.add("pseudo", "offset", instr, pseudo)
            self.add("variable", "const", instr, offset, const=op.disp)
            if op.base is not None:
                base = self.add("pseudo", "base", instr, pseudo)
                self.add("variable", "reg", instr, base, reg=op.base)
            if op.index is not None:
                ind = self.add("pseudo", "ind-base", instr, pseudo)
                self.add("variable", "reg", instr, ind, reg=op.index)
                self.add("variable", "const", instr, ind, const=op.scale)
        else:
            # ablated: same variable leaves, directly under the operand node
            self.add("variable", "const", instr, pseudo, const=op.disp)
            if op.base is not None:
                self.add("variable", "reg", instr, pseudo, reg=op.base)
            if op.index is not None:
                self.add("variable", "reg", instr, pseudo, reg=op.index)
                self.add("variable", "const", instr, pseudo, const=op.scale)
        return pseudo


def _usage_edges(program, occurrences):
    """Reaching-occurrence analysis at instruction granularity.

    occurrences[i] is the list of (node_id, register) pairs at instruction
    i.  Any occurrence of a register, read or write, kills earlier ones.
    Returns edges from each occurrence to every occurrence reaching it.
    """
    n = len(program.instructions)
    preds = [[] for _ in range(n)]
    for i in range(n):
        fall, target = branch_successors(program, i)
        for succ in (fall, target):
            if succ is not None and succ < n:
                preds[succ].append(i)

    gen = []
    for i in range(n):
        here = {}
        for node_id, reg in occurrences[i]:
            here.setdefault(reg, set()).add(node_id)
        gen.append({reg: frozenset(ids) for reg, ids in here.items()})

    reach_in = [{} for _ in range(n)]
    changed = True
    while changed:
        changed = False
        for i in range(n):
            merged = {}
            for p in preds[i]:
                out_p = dict(reach_in[p])
                out_p.update(gen[p])
                for reg, ids in out_p.items():
                    merged[reg] = merged.get(reg, frozenset()) | ids
            if merged != reach_in[i]:
                reach_in[i] = merged
                changed = True

    edges = []
    for i in range(n):
        for node_id, reg in occurrences[i]:
            for prior in sorted(reach_in[i].get(reg, frozenset())):
                edges.append((node_id, prior))
    return edges


def build_graph(program, mode="full"):
    if mode not in GRAPH_MODES:
        raise GraphError(f"unknown graph mode {mode!r}")
    b = _Builder(mode)
    instr_nodes = []
    branch_task = {}
    prefetch_task = {}
    for ins in program.instructions:
        inode = b.add("instruction", None, ins.index)
        instr_nodes.append(inode)
        if ins.kind == "cond-branch":
            branch_task[ins.index] = inode
        for op, role in _operand_roles(ins):
            pseudo = b.add_operand(op, role, ins.index, inode)
            if ins.kind == "move-load" and isinstance(op, Mem):
                prefetch_task[ins.index] = pseudo

    cf_edges = []
    n = len(program.instructions)
    for i in range(n):
        fall, target = branch_successors(program, i)
        for succ in (fall, target):
            if succ is not None and succ < n:
                cf_edges.append((instr_nodes[i], instr_nodes[succ]))

    occurrences = [[] for _ in range(n)]
    for node in b.nodes:
        if node.major == "variable" and node.sub == "reg":
            occurrences[node.instr].append((node.idx, node.reg))
    usage = _usage_edges(program, occurrences)

    edges = {
        "control-flow": tuple(cf_edges),
        "parent": tuple(b.parent_edges),
        "usage": tuple(usage),
    }
    for name in ("control-flow", "parent", "usage"):
        edges[name + "-rev"] = tuple((d, s) for s, d in edges[name])

    return FusedGraph(
        mode=mode, nodes=tuple(b.nodes), edges=edges,
        children={k: tuple(v) for k, v in b.children.items()},
        mem_operands=dict(b.mem_operands),
        branch_task_nodes=branch_task, prefetch_task_nodes=prefetch_task,
        orig_ids=tuple(range(len(b.nodes))),
    )


def neighborhood(graph, node_id, radius):
    """Induced subgraph of everything within `radius` hops, edges read as
    undirected for the walk.  Node ids are remapped; orig_ids maps back."""
    if not 0 <= node_id < len(graph.nodes):
        raise GraphError(f"node id {node_id} out of range")
    adj = {}
    for pairs in graph.edges.values():
        for s, d in pairs:
            adj.setdefault(s, set()).add(d)
            adj.setdefault(d, set()).add(s)
    keep = {node_id}
    frontier = {node_id}
    for _ in range(radius):
        nxt = set()
        for u in frontier:
            nxt |= adj.get(u, set()) - keep
        if not nxt:
            break
        keep |= nxt
        frontier = nxt

    old_ids = sorted(keep)
    remap = {old: new for new, old in enumerate(old_ids)}
    nodes = tuple(
        Node(remap[o], graph.nodes[o].major, graph.nodes[o].sub,
             graph.nodes[o].instr, reg=graph.nodes[o].reg,
             const=graph.nodes[o].const)
        for o in old_ids)
    edges = {
        name: tuple((remap[s], remap[d]) for s, d in pairs
                    if s in keep and d in keep)
        for name, pairs in graph.edges.items()
    }
    children = {
        remap[o]: tuple(remap[c] for c in graph.children[o] if c in keep)
        for o in old_ids}
    return FusedGraph(
        mode=graph.mode, nodes=nodes, edges=edges, children=children,
        mem_operands={remap[o]: op for o, op in graph.mem_operands.items()
                      if o in keep},
        branch_task_nodes={i: remap[o] for i, o in graph.branch_task_nodes.items()
                           if o in keep},
        prefetch_task_nodes={i: remap[o] for i, o in graph.prefetch_task_nodes.items()
                             if o in keep},
        orig_ids=tuple(graph.orig_ids[o] for o in old_ids),
    )


@dataclass(frozen=True)
class ValuedGraph:
    graph: FusedGraph
    values: np.ndarray  # uint64, zero where missing or unvalued
    missing: np.ndarray  # bool, memory value absent from the window
    valued: np.ndarray  # bool, False only for instruction nodes


def assign_dynamic_values(graph, event):
    """Re-value the graph under one snapshot; the graph itself is untouched.

    Values resolve bottom-up: leaves from the register file and literals,
    addressing pseudo nodes from their children, memory operand nodes by
    looking their effective address up in the snapshot's recency window.
    """
    n = len(graph.nodes)
    values = np.zeros(n, dtype=np.uint64)
    missing = np.zeros(n, dtype=bool)
    valued = np.zeros(n, dtype=bool)
    recent = dict(event.recent_mem)
    vals = {}

    # children always carry higher ids than their parent
    for node in reversed(graph.nodes):
        i = node.idx
        if node.major == "instruction":
            continue
        valued[i] = True
        if node.major == "variable":
            if node.sub == "reg":
                vals[i] = event.regs[node.reg] & MASK64
            else:
                vals[i] = node.const & MASK64
        elif node.sub == "offset":
            vals[i] = vals[graph.children[i][0]]
        elif node.sub == "base":
            vals[i] = vals[graph.children[i][0]]
        elif node.sub == "ind-base":
            reg_child, scale_child = graph.children[i]
            vals[i] = (vals[reg_child] * vals[scale_child]) & MASK64
        elif node.sub in ("mem-src", "mem-tgt"):
            op = graph.mem_operands[i]
            if graph.mode == "full":
                addr = sum(vals[c] for c in graph.children[i]
                           if graph.nodes[c].major == "pseudo") & MASK64
            else:
                addr = op.disp
                if op.base is not None:
                    addr += event.regs[op.base]
                if op.index is not None:
                    addr += event.regs[op.index] * op.scale
                addr &= MASK64
            if addr in recent:
                vals[i] = recent[addr]
            else:
                vals[i] = 0
                missing[i] = True
        else:  # non-mem-src / non-mem-tgt
            vals[i] = vals[graph.children[i][0]]
        values[i] = vals[i]

    return ValuedGraph(graph=graph, values=values, missing=missing, valued=valued)


def packed_edges(graph):
    """Edges flattened into (src, dst, type_ptr) arrays, grouped by type in
    EDGE_TYPES order, for the propagation kernels."""
    src, dst, ptr = [], [], [0]
    for name in EDGE_TYPES:
        for s, d in graph.edges[name]:
            src.append(s)
            dst.append(d)
        ptr.append(len(src))
    return (np.asarray(src, dtype=np.int64),
            np.asarray(dst, dtype=np.int64),
            np.asarray(ptr, dtype=np.int64))


def to_json(graph):
    return {
        "mode": graph.mode,
        "nodes": [
            {"id": n.idx, "major": n.major, "sub": n.sub, "instr": n.instr,
             "reg": n.reg, "const": n.const}
            for n in graph.nodes
        ],
        "edges": {name: [list(p) for p in pairs]
                  for name, pairs in graph.edges.items()},
        "branch_task_nodes": dict(graph.branch_task_nodes),
        "prefetch_task_nodes": dict(graph.prefetch_task_nodes),
    }


def dump_json(graph, path):
    with open(path, "w") as fh:
        json.dump(to_json(graph), fh, indent=2, sort_keys=True)
        fh.write("\n")
