"""Deterministic interpreter that records prediction events while executing.

Execution is single-threaded over word-granular 64-bit memory.  Two kinds
of events are snapshotted, always *before* the instruction executes:

- every conditional branch, labeled with its outcome, and
- every load, labeled with the address of the next dynamic execution of
  the same static load (absent for its final execution).

A snapshot carries the full register file plus a recency window over the
addresses loaded so far: up to W (address, value) pairs, most recent
first, deduplicated, re-promoted on re-access, with values read from
memory at snapshot time.
"""

from collections import OrderedDict
from dataclasses import dataclass, replace
import json

from .asm import Imm, Reg, Mem, REGISTERS, MASK64


class TraceError(Exception):
    pass


@dataclass
class MachineState:
    regs: dict
    mem: dict
    zf: bool = False
    sf: bool = False
    pc: int = 0
    instr_count: int = 0


@dataclass(frozen=True)
class Event:
    seq: int
    pc: int
    kind: str  # "branch" or "load"
    instr_count: int  # instructions retired before this one
    regs: dict
    recent_mem: tuple  # ((addr, value), ...) most recent first
    taken: bool | None = None  # branch outcome
    addr: int | None = None  # this load's address
    next_addr: int | None = None  # next dynamic address of the same static load
    next_present: bool = False


@dataclass(frozen=True)
class Trace:
    program_id: str
    window: int
    total_instr: int
    truncated: bool
    events: tuple

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


def _signed(value):
    value &= MASK64
    return value - (1 << 64) if value >= 1 << 63 else value


def operand_address(op, regs):
    """Effective address of a memory operand: disp + base + index*scale."""
    addr = op.disp
    if op.base is not None:
        addr += regs[op.base]
    if op.index is not None:
        addr += regs[op.index] * op.scale
    return addr & MASK64


def _read(op, state):
    if isinstance(op, Imm):
        return op.value
    if isinstance(op, Reg):
        return state.regs[op.name]
    raise TypeError(f"cannot read operand {op!r}")


def snapshot_window(state, history, window):
    """Up to `window` most recently loaded (address, value) pairs.

    `history` holds loaded addresses in recency order (oldest first);
    values are read fresh from memory so later stores show through.
    """
    recent = []
    for addr in reversed(history):
        if len(recent) >= window:
            break
        recent.append((addr, state.mem[addr]))
    return recent


_COND = {
    "je": lambda zf, sf: zf,
    "jne": lambda zf, sf: not zf,
    "jl": lambda zf, sf: sf,
    "jle": lambda zf, sf: sf or zf,
    "jg": lambda zf, sf: not sf and not zf,
    "jge": lambda zf, sf: not sf,
}


def execute(program, init_regs=None, init_mem=None, limit=1_000_000,
            window=32, program_id=""):
    """Run a program to halt (or `limit` instructions) and collect events.

    Registers default to zero; memory defaults to empty and faults on any
    access to an unmapped address.  Returns a Trace whose load events are
    labeled in a second pass once the whole event stream is known.
    """
    regs = {name: 0 for name in REGISTERS}
    for name, value in (init_regs or {}).items():
        if name not in regs:
            raise TraceError(f"unknown register {name!r} in initial state")
        regs[name] = value & MASK64
    mem = {addr & MASK64: value & MASK64 for addr, value in (init_mem or {}).items()}
    state = MachineState(regs=regs, mem=mem)
    history = OrderedDict()  # loaded addresses, oldest first
    events = []
    truncated = False
    n = len(program.instructions)

    while 0 <= state.pc < n:
        if state.instr_count >= limit:
            truncated = True
            break
        ins = program.instructions[state.pc]
        if ins.kind == "halt":
            state.instr_count += 1
            break

        if ins.kind == "cond-branch":
            taken = _COND[ins.mnemonic](state.zf, state.sf)
            events.append(Event(
                seq=len(events), pc=state.pc, kind="branch",
                instr_count=state.instr_count, regs=dict(state.regs),
                recent_mem=tuple(snapshot_window(state, history, window)),
                taken=taken,
            ))
            state.pc = ins.target if taken else state.pc + 1
            state.instr_count += 1
            continue
        if ins.kind == "jump":
            state.pc = ins.target
            state.instr_count += 1
            continue

        if ins.kind == "move-load":
            src, dst = ins.operands
            addr = operand_address(src, state.regs)
            events.append(Event(
                seq=len(events), pc=state.pc, kind="load",
                instr_count=state.instr_count, regs=dict(state.regs),
                recent_mem=tuple(snapshot_window(state, history, window)),
                addr=addr,
            ))
            if addr not in state.mem:
                raise TraceError(f"load from unmapped address 0x{addr:x} at pc {state.pc}")
            state.regs[dst.name] = state.mem[addr]
            history[addr] = None
            history.move_to_end(addr)
        elif ins.kind == "move-store":
            src, dst = ins.operands
            addr = operand_address(dst, state.regs)
            if addr not in state.mem:
                raise TraceError(f"store to unmapped address 0x{addr:x} at pc {state.pc}")
            state.mem[addr] = _read(src, state)
        elif ins.kind == "move-reg":
            src, dst = ins.operands
            state.regs[dst.name] = _read(src, state)
        elif ins.kind == "arith":
            if ins.mnemonic == "inc":
                reg = ins.operands[0].name
                state.regs[reg] = (state.regs[reg] + 1) & MASK64
            else:
                src, dst = ins.operands
                a, b = _read(src, state), state.regs[dst.name]
                if ins.mnemonic == "add":
                    result = b + a
                elif ins.mnemonic == "sub":
                    result = b - a
                else:  # imul
                    result = _signed(b) * _signed(a)
                state.regs[dst.name] = result & MASK64
        elif ins.kind == "compare":
            src, dst = ins.operands
            diff = _signed(_read(dst, state)) - _signed(_read(src, state))
            state.zf = diff == 0
            state.sf = diff < 0
        else:
            raise TraceError(f"cannot execute kind {ins.kind!r} at pc {state.pc}")
        state.pc += 1
        state.instr_count += 1

    return Trace(
        program_id=program_id, window=window,
        total_instr=state.instr_count, truncated=truncated,
        events=tuple(_label_loads(events)),
    )


def _label_loads(events):
    """Attach next-dynamic-address labels to each static load's events."""
    by_pc = {}
    for ev in events:
        if ev.kind == "load":
            by_pc.setdefault(ev.pc, []).append(ev.seq)
    labeled = list(events)
    for seqs in by_pc.values():
        for here, there in zip(seqs, seqs[1:]):
            labeled[here] = replace(
                labeled[here], next_addr=labeled[there].addr, next_present=True)
    return labeled


def _hex(value):
    return f"0x{value:x}"


def _event_json(ev):
    rec = {
        "seq": ev.seq, "pc": ev.pc, "kind": ev.kind,
        "instr_count": ev.instr_count,
        "regs": {name: _hex(val) for name, val in ev.regs.items()},
        "recent_mem": [[_hex(a), _hex(v)] for a, v in ev.recent_mem],
    }
    if ev.kind == "branch":
        rec["taken"] = ev.taken
    else:
        rec["addr"] = _hex(ev.addr)
        rec["next_addr"] = _hex(ev.next_addr) if ev.next_present else None
    return rec


def write_trace(trace, path):
    """Serialize as JSON lines: a header record, then one record per event."""
    with open(path, "w") as fh:
        header = {
            "program_id": trace.program_id, "window": trace.window,
            "total_instr": trace.total_instr, "truncated": trace.truncated,
        }
        fh.write(json.dumps(header) + "\n")
        for ev in trace.events:
            fh.write(json.dumps(_event_json(ev)) + "\n")


def _parse_hex(text, line_no):
    try:
        return int(text, 16)
    except (TypeError, ValueError):
        raise TraceError(f"line {line_no}: bad hex value {text!r}") from None


def read_trace(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise TraceError("empty trace file")
    try:
        header = json.loads(lines[0])
        program_id = header["program_id"]
        window = header["window"]
        total_instr = header["total_instr"]
        truncated = header["truncated"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise TraceError(f"line 1: bad trace header ({exc})") from None
    events = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceError(f"line {line_no}: bad JSON ({exc})") from None
        try:
            kind = rec["kind"]
            common = dict(
                seq=rec["seq"], pc=rec["pc"], kind=kind,
                instr_count=rec["instr_count"],
                regs={n: _parse_hex(v, line_no) for n, v in rec["regs"].items()},
                recent_mem=tuple(
                    (_parse_hex(a, line_no), _parse_hex(v, line_no))
                    for a, v in rec["recent_mem"]),
            )
            if kind == "branch":
                events.append(Event(taken=bool(rec["taken"]), **common))
            elif kind == "load":
                next_addr = rec["next_addr"]
                events.append(Event(
                    addr=_parse_hex(rec["addr"], line_no),
                    next_addr=None if next_addr is None else _parse_hex(next_addr, line_no),
                    next_present=next_addr is not None,
                    **common))
            else:
                raise TraceError(f"line {line_no}: unknown event kind {kind!r}")
        except KeyError as exc:
            raise TraceError(f"line {line_no}: missing field {exc}") from None
    return Trace(program_id=program_id, window=window, total_instr=total_instr,
                 truncated=truncated, events=tuple(events))
