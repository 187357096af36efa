"""Parser and static analysis for a small AT&T-flavored assembly dialect.

Source form, one instruction per line:

    label:  mnemonic src, dst   ; comment

Operands follow AT&T conventions: ``$imm`` immediates, ``%reg`` registers,
and ``disp(base,index,scale)`` memory references with scale in {1,2,4,8}.
Numbers are decimal or 0x-hex, optionally negative.  Sixteen 64-bit
general-purpose registers are available.  ``cmp`` is the only instruction
that writes the flags (ZF, SF); conditional jumps read them.  Memory
operands are only accepted on ``mov`` (loads and stores); arithmetic is
register/immediate only.
"""

from dataclasses import dataclass
import re

REGISTERS = (
    "rax", "rbx", "rcx", "rdx", "rsi", "rdi", "rbp", "rsp",
    "r8", "r9", "r10", "r11", "r12", "r13", "r14", "r15",
)

MNEMONICS = (
    "mov", "add", "sub", "imul", "inc", "cmp",
    "jmp", "je", "jne", "jl", "jle", "jg", "jge", "halt",
)

COND_BRANCHES = ("je", "jne", "jl", "jle", "jg", "jge")

MASK64 = (1 << 64) - 1


class AsmError(Exception):
    """Raised for syntax errors, bad operands, or unresolvable labels."""

    def __init__(self, msg, line=None):
        self.line = line
        if line is not None:
            msg = f"line {line}: {msg}"
        super().__init__(msg)


@dataclass(frozen=True)
class Imm:
    value: int  # unsigned 64-bit


@dataclass(frozen=True)
class Reg:
    name: str


@dataclass(frozen=True)
class Mem:
    disp: int = 0  # signed displacement as written
    base: str | None = None
    index: str | None = None
    scale: int = 1


@dataclass(frozen=True)
class Instruction:
    index: int
    mnemonic: str
    operands: tuple
    kind: str
    target: int | None = None  # resolved branch/jump destination


@dataclass(frozen=True)
class Program:
    instructions: tuple
    labels: dict

    def __len__(self):
        return len(self.instructions)

    def __getitem__(self, i):
        return self.instructions[i]


_LABEL_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*:\s*(.*)$")
_NUM_RE = re.compile(r"^-?(0[xX][0-9a-fA-F]+|\d+)$")


def _parse_number(text, line):
    if not _NUM_RE.match(text):
        raise AsmError(f"bad number {text!r}", line)
    return int(text, 0)


def _parse_register(text, line):
    if not text.startswith("%"):
        raise AsmError(f"expected register, got {text!r}", line)
    name = text[1:]
    if name not in REGISTERS:
        raise AsmError(f"unknown register %{name}", line)
    return name


def _parse_mem(text, line):
    open_paren = text.index("(")
    if not text.endswith(")"):
        raise AsmError(f"bad memory operand {text!r}", line)
    disp_text = text[:open_paren].strip()
    disp = _parse_number(disp_text, line) if disp_text else 0
    if disp >= 1 << 63 or disp < -(1 << 63):
        raise AsmError(f"displacement out of signed 64-bit range: {disp_text}", line)
    inner = text[open_paren + 1:-1]
    parts = [p.strip() for p in inner.split(",")]
    if len(parts) > 3 or (len(parts) == 1 and not parts[0]):
        raise AsmError(f"bad memory operand {text!r}", line)
    base = _parse_register(parts[0], line) if parts[0] else None
    index = None
    scale = 1
    if len(parts) >= 2:
        if not parts[1]:
            raise AsmError(f"bad memory operand {text!r}", line)
        index = _parse_register(parts[1], line)
        if len(parts) == 3:
            scale = _parse_number(parts[2], line)
            if scale not in (1, 2, 4, 8):
                raise AsmError(f"scale must be 1, 2, 4, or 8, got {scale}", line)
    if base is None and index is None:
        raise AsmError(f"memory operand needs a base or index register: {text!r}", line)
    return Mem(disp=disp, base=base, index=index, scale=scale)


def _parse_operand(text, line):
    text = text.strip()
    if not text:
        raise AsmError("empty operand", line)
    if text.startswith("$"):
        return Imm(_parse_number(text[1:], line) & MASK64)
    if text.startswith("%"):
        return Reg(_parse_register(text, line))
    if "(" in text:
        return _parse_mem(text, line)
    raise AsmError(f"bad operand {text!r}", line)


def _split_operands(text):
    """Split on commas that are not inside a memory operand's parens."""
    parts = []
    depth = 0
    cur = []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts


def _classify(mnemonic, operands, line):
    """Validate operand shapes and return the instruction kind."""
    n_mem = sum(isinstance(op, Mem) for op in operands)
    if mnemonic == "halt":
        if operands:
            raise AsmError("halt takes no operands", line)
        return "halt"
    if mnemonic == "jmp":
        return "jump"
    if mnemonic in COND_BRANCHES:
        return "cond-branch"
    if mnemonic == "mov":
        if len(operands) != 2:
            raise AsmError("mov takes source, destination", line)
        src, dst = operands
        if n_mem > 1:
            raise AsmError("mov allows at most one memory operand", line)
        if isinstance(dst, Imm):
            raise AsmError("mov destination cannot be an immediate", line)
        if isinstance(src, Mem):
            return "move-load"
        if isinstance(dst, Mem):
            return "move-store"
        return "move-reg"
    if mnemonic in ("add", "sub", "imul"):
        if len(operands) != 2:
            raise AsmError(f"{mnemonic} takes source, destination", line)
        if n_mem:
            raise AsmError(f"{mnemonic} does not take memory operands", line)
        if not isinstance(operands[1], Reg):
            raise AsmError(f"{mnemonic} destination must be a register", line)
        return "arith"
    if mnemonic == "inc":
        if len(operands) != 1 or not isinstance(operands[0], Reg):
            raise AsmError("inc takes one register operand", line)
        return "arith"
    if mnemonic == "cmp":
        if len(operands) != 2:
            raise AsmError("cmp takes two operands", line)
        if n_mem:
            raise AsmError("cmp does not take memory operands", line)
        return "compare"
    raise AsmError(f"unknown mnemonic {mnemonic!r}", line)


def parse(text):
    """Parse assembly source into a Program.

    Labels may share a line with an instruction or stand alone; either way
    they bind to the next instruction.  Branch targets may be labels or
    bare instruction indices.
    """
    labels = {}
    pending = []  # (mnemonic, raw_operands, line_no)
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        while True:
            m = _LABEL_RE.match(line)
            if not m:
                break
            name, line = m.group(1), m.group(2).strip()
            if name in labels:
                raise AsmError(f"duplicate label {name!r}", line_no)
            labels[name] = len(pending)
        if not line:
            continue
        fields = line.split(None, 1)
        mnemonic = fields[0].lower()
        if mnemonic not in MNEMONICS:
            raise AsmError(f"unknown mnemonic {mnemonic!r}", line_no)
        rest = fields[1] if len(fields) > 1 else ""
        pending.append((mnemonic, rest, line_no))

    for name, idx in labels.items():
        if idx >= len(pending):
            raise AsmError(f"label {name!r} points past the last instruction")

    instructions = []
    for idx, (mnemonic, rest, line_no) in enumerate(pending):
        if mnemonic in ("jmp",) + COND_BRANCHES:
            target_text = rest.strip()
            if not target_text or "," in target_text:
                raise AsmError(f"{mnemonic} takes one target", line_no)
            if _NUM_RE.match(target_text):
                target = int(target_text, 0)
            elif target_text in labels:
                target = labels[target_text]
            else:
                raise AsmError(f"unresolvable label {target_text!r}", line_no)
            if not 0 <= target < len(pending):
                raise AsmError(f"branch target {target} out of range", line_no)
            kind = "jump" if mnemonic == "jmp" else "cond-branch"
            instructions.append(Instruction(idx, mnemonic, (), kind, target))
            continue
        operands = ()
        if rest.strip():
            operands = tuple(_parse_operand(p, line_no) for p in _split_operands(rest))
        kind = _classify(mnemonic, operands, line_no)
        instructions.append(Instruction(idx, mnemonic, operands, kind))

    return Program(tuple(instructions), labels)


def _format_operand(op):
    if isinstance(op, Imm):
        return f"$0x{op.value:x}"
    if isinstance(op, Reg):
        return f"%{op.name}"
    parts = []
    if op.base:
        parts.append(f"%{op.base}")
    if op.index:
        parts.append(f"%{op.index}")
        if op.scale != 1:
            parts.append(str(op.scale))
    disp = ""
    if op.disp:
        disp = f"-0x{-op.disp:x}" if op.disp < 0 else f"0x{op.disp:x}"
    return f"{disp}({', '.join(parts)})".replace(", ", ",")


def pretty(program):
    """Render a Program back to parseable source with numeric targets.

    The result reparses to a Program with structurally equal instructions
    (labels are dropped; targets stay as indices).
    """
    lines = []
    for ins in program.instructions:
        if ins.target is not None:
            lines.append(f"{ins.mnemonic} {ins.target}")
        elif ins.operands:
            ops = ", ".join(_format_operand(op) for op in ins.operands)
            lines.append(f"{ins.mnemonic} {ops}")
        else:
            lines.append(ins.mnemonic)
    return "\n".join(lines) + "\n"


def branch_successors(program, index):
    """Return (fallthrough, branch_target) instruction indices.

    Conditional branches have both, unconditional jumps only a target,
    halt neither, and everything else only the fallthrough.
    """
    if not 0 <= index < len(program.instructions):
        raise IndexError(f"instruction index {index} out of range")
    ins = program.instructions[index]
    if ins.kind == "cond-branch":
        return index + 1, ins.target
    if ins.kind == "jump":
        return None, ins.target
    if ins.kind == "halt":
        return None, None
    return index + 1, None


@dataclass(frozen=True)
class BasicBlock:
    start: int
    end: int  # exclusive

    def __contains__(self, idx):
        return self.start <= idx < self.end


@dataclass(frozen=True)
class CfgEdge:
    src: int  # block ids
    dst: int
    polarity: str  # "true" / "false" for cond-branches, "fallthrough" otherwise


@dataclass(frozen=True)
class Cfg:
    blocks: tuple
    edges: tuple

    def block_of(self, instr_index):
        for b, blk in enumerate(self.blocks):
            if instr_index in blk:
                return b
        raise IndexError(f"instruction index {instr_index} not in any block")


def build_cfg(program):
    """Partition instructions into basic blocks and connect them.

    Leaders are instruction 0, every branch target, and every instruction
    following a branch, jump, or halt.
    """
    n = len(program.instructions)
    if n == 0:
        return Cfg((), ())
    leaders = {0}
    for ins in program.instructions:
        if ins.target is not None:
            leaders.add(ins.target)
        if ins.kind in ("cond-branch", "jump", "halt") and ins.index + 1 < n:
            leaders.add(ins.index + 1)
    starts = sorted(leaders)
    blocks = tuple(
        BasicBlock(s, e) for s, e in zip(starts, starts[1:] + [n])
    )
    block_of = {}
    for b, blk in enumerate(blocks):
        for i in range(blk.start, blk.end):
            block_of[i] = b

    edges = []
    for b, blk in enumerate(blocks):
        last = program.instructions[blk.end - 1]
        fall, target = branch_successors(program, last.index)
        if last.kind == "cond-branch":
            edges.append(CfgEdge(b, block_of[target], "true"))
            if fall is not None and fall < n:
                edges.append(CfgEdge(b, block_of[fall], "false"))
        elif last.kind == "jump":
            edges.append(CfgEdge(b, block_of[target], "fallthrough"))
        elif last.kind == "halt":
            pass
        elif fall is not None and fall < n:
            edges.append(CfgEdge(b, block_of[fall], "fallthrough"))
    return Cfg(blocks, tuple(edges))
