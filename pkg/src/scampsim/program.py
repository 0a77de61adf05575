"""Plane-instruction programs: representation, executor, listing and timing.

A PpaProgram is an ordered list of instructions over an ArrayState. Execution
is validate-then-execute: every register reference and immediate is checked
before the first instruction runs, so a rejected program leaves the state
bit-identical. Timing is a pure function of per-opcode costs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .planes import SHIFT_OFFSETS, ArrayState, RegisterError

OPCODES = ("add", "sub", "neg", "copy", "max", "shift", "thresh", "logic",
           "pattern", "gsum")

LOGIC_OPS = ("and", "or", "xor", "not")


class ProgramError(ValueError):
    """Malformed instruction, listing, or program/state mismatch."""


class CostError(ValueError):
    """Cost table does not cover an opcode used by the program."""


@dataclass(eq=False)
class Instruction:
    opcode: str
    dst: str | None = None
    a: str | None = None
    b: str | None = None
    mask: str | None = None
    direction: str | None = None
    steps: int | None = None
    value: int | None = None          # threshold immediate
    logic: str | None = None          # and / or / xor / not
    label: str | None = None          # gsum result label
    pattern: np.ndarray | None = None  # H x W bits for `pattern`

    def __eq__(self, other):
        if not isinstance(other, Instruction):
            return NotImplemented
        if self.pattern is None or other.pattern is None:
            pat_eq = self.pattern is other.pattern
        else:
            pat_eq = np.array_equal(self.pattern, other.pattern)
        return pat_eq and all(
            getattr(self, f) == getattr(other, f)
            for f in ("opcode", "dst", "a", "b", "mask", "direction", "steps",
                      "value", "logic", "label")
        )


@dataclass
class PpaProgram:
    """Immutable after construction; safely shareable across threads."""

    instructions: list[Instruction]
    sum_labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        gsum_labels = [i.label for i in self.instructions if i.opcode == "gsum"]
        if not self.sum_labels:
            self.sum_labels = gsum_labels
        elif self.sum_labels != gsum_labels:
            raise ProgramError("sum_labels do not match gsum instructions in order")

    def __len__(self):
        return len(self.instructions)

    def __eq__(self, other):
        if not isinstance(other, PpaProgram):
            return NotImplemented
        return (self.sum_labels == other.sum_labels
                and self.instructions == other.instructions)


# -- validation and execution -------------------------------------------


def _validate_instruction(ins: Instruction, state: ArrayState):
    op = ins.opcode
    if op not in OPCODES:
        raise ProgramError(f"unknown opcode {op!r}")
    if op in ("add", "sub", "max"):
        for r in (ins.dst, ins.a, ins.b):
            state.areg(r)
    elif op in ("neg", "copy"):
        state.areg(ins.dst)
        state.areg(ins.a)
    elif op == "shift":
        state.areg(ins.dst)
        state.areg(ins.a)
        if ins.direction not in SHIFT_OFFSETS:
            raise ProgramError(f"bad shift direction {ins.direction!r}")
        if ins.steps is None or ins.steps < 0:
            raise ProgramError("shift steps must be >= 0")
    elif op == "thresh":
        state.dreg(ins.dst)
        state.areg(ins.a)
        if ins.value is None:
            raise ProgramError("thresh needs an immediate value")
    elif op == "logic":
        if ins.logic not in LOGIC_OPS:
            raise ProgramError(f"bad logic op {ins.logic!r}")
        state.dreg(ins.dst)
        state.dreg(ins.a)
        if ins.logic != "not":
            state.dreg(ins.b)
    elif op == "pattern":
        state.dreg(ins.dst)
        if ins.pattern is None:
            raise ProgramError("pattern instruction carries no bits")
        if ins.pattern.shape != state.geometry.shape:
            raise ProgramError(
                f"pattern shape {ins.pattern.shape} != geometry {state.geometry.shape}"
            )
    elif op == "gsum":
        state.areg(ins.a)
        if ins.label is None:
            raise ProgramError("gsum needs a label")
    if op in ("add", "sub", "neg", "copy", "max") and ins.mask is not None:
        state.dreg(ins.mask)


def validate(program: PpaProgram, state: ArrayState):
    """Reject the whole program before any instruction runs."""
    for idx, ins in enumerate(program.instructions):
        try:
            _validate_instruction(ins, state)
        except (ProgramError, RegisterError) as e:
            raise ProgramError(f"instruction {idx} ({ins.opcode}): {e}") from None


def execute(program: PpaProgram, state: ArrayState,
            on_instruction=None) -> tuple[ArrayState, list[int]]:
    """Run the program; return the mutated state and recorded global sums.

    `on_instruction(index, instruction, state)` is called after each
    instruction, for tracing/dumping.
    """
    validate(program, state)
    sums: list[int] = []
    for idx, ins in enumerate(program.instructions):
        op = ins.opcode
        if op == "add":
            state.add(ins.dst, ins.a, ins.b, ins.mask)
        elif op == "sub":
            state.sub(ins.dst, ins.a, ins.b, ins.mask)
        elif op == "neg":
            state.neg(ins.dst, ins.a, ins.mask)
        elif op == "copy":
            state.copy(ins.dst, ins.a, ins.mask)
        elif op == "max":
            state.max_combine(ins.dst, ins.a, ins.b, ins.mask)
        elif op == "shift":
            state.shift(ins.dst, ins.a, ins.direction, ins.steps)
        elif op == "thresh":
            state.threshold_into(ins.dst, ins.a, ins.value)
        elif op == "logic":
            state.dreg_logic(ins.dst, ins.logic, ins.a, ins.b)
        elif op == "pattern":
            state.write_pattern(ins.dst, ins.pattern)
        elif op == "gsum":
            sums.append(state.global_sum_of(ins.a))
        if on_instruction is not None:
            on_instruction(idx, ins, state)
    return state, sums


# -- listing format ------------------------------------------------------


def _pattern_to_hex(pattern: np.ndarray) -> str:
    h, w = pattern.shape
    return f"{h}x{w}:" + np.packbits(pattern.astype(np.uint8)).tobytes().hex()


def _pattern_from_hex(text: str) -> np.ndarray:
    try:
        dims, hexbits = text.split(":", 1)
        hs, ws = dims.split("x")
        h, w = int(hs), int(ws)
        raw = np.frombuffer(bytes.fromhex(hexbits), dtype=np.uint8)
        return np.unpackbits(raw)[: h * w].reshape(h, w)
    except Exception as e:
        raise ProgramError(f"bad pattern literal: {e}") from None


def disassemble_instruction(ins: Instruction) -> str:
    op = ins.opcode
    if op in ("add", "sub", "max"):
        line = f"{op} {ins.dst} {ins.a} {ins.b}"
    elif op in ("neg", "copy"):
        line = f"{op} {ins.dst} {ins.a}"
    elif op == "shift":
        return f"shift {ins.dst} {ins.a} {ins.direction} {ins.steps}"
    elif op == "thresh":
        return f"thresh {ins.dst} {ins.a} {ins.value}"
    elif op == "logic":
        if ins.logic == "not":
            return f"logic {ins.dst} not {ins.a}"
        return f"logic {ins.dst} {ins.logic} {ins.a} {ins.b}"
    elif op == "pattern":
        return f"pattern {ins.dst} {_pattern_to_hex(ins.pattern)}"
    elif op == "gsum":
        return f"gsum {ins.a} {ins.label}"
    else:
        raise ProgramError(f"unknown opcode {op!r}")
    if ins.mask is not None:
        line += f" mask={ins.mask}"
    return line


def disassemble(program: PpaProgram) -> str:
    """One instruction per line; empty program yields an empty listing."""
    return "".join(disassemble_instruction(i) + "\n" for i in program.instructions)


def _parse_mask(fields: list[str]) -> tuple[list[str], str | None]:
    if fields and fields[-1].startswith("mask="):
        return fields[:-1], fields[-1][len("mask="):]
    return fields, None


def parse_listing(text: str) -> PpaProgram:
    """Inverse of disassemble. `#` starts a comment; blank lines ignored."""
    instructions: list[Instruction] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        op, rest = fields[0], fields[1:]
        try:
            if op in ("add", "sub", "max"):
                rest, mask = _parse_mask(rest)
                dst, a, b = rest
                ins = Instruction(op, dst=dst, a=a, b=b, mask=mask)
            elif op in ("neg", "copy"):
                rest, mask = _parse_mask(rest)
                dst, a = rest
                ins = Instruction(op, dst=dst, a=a, mask=mask)
            elif op == "shift":
                dst, a, direction, steps = rest
                ins = Instruction(op, dst=dst, a=a, direction=direction,
                                  steps=int(steps))
            elif op == "thresh":
                dst, a, value = rest
                ins = Instruction(op, dst=dst, a=a, value=int(value))
            elif op == "logic":
                if rest[1] == "not":
                    dst, _, a = rest
                    ins = Instruction(op, dst=dst, a=a, logic="not")
                else:
                    dst, lop, a, b = rest
                    ins = Instruction(op, dst=dst, a=a, b=b, logic=lop)
            elif op == "pattern":
                dst, pat = rest
                ins = Instruction(op, dst=dst, pattern=_pattern_from_hex(pat))
            elif op == "gsum":
                a, label = rest
                ins = Instruction(op, a=a, label=label)
            else:
                raise ProgramError(f"unknown opcode {op!r}")
        except (ValueError, ProgramError) as e:
            raise ProgramError(f"line {lineno}: {e}") from None
        instructions.append(ins)
    return PpaProgram(instructions)


# -- cost model ----------------------------------------------------------


@dataclass
class CostModel:
    """Per-opcode execution time in microseconds plus a fixed overhead."""

    costs: dict[str, float]
    overhead_us: float = 0.0

    def __post_init__(self):
        if self.overhead_us < 0 or any(c < 0 for c in self.costs.values()):
            raise CostError("all costs must be >= 0")

    @classmethod
    def from_json(cls, text: str) -> "CostModel":
        doc = json.loads(text)
        overhead = float(doc.pop("overhead_us", 0.0))
        costs = {k: float(v) for k, v in doc.items() if not k.startswith("_")}
        return cls(costs, overhead)

    def to_json(self) -> str:
        doc: dict = dict(sorted(self.costs.items()))
        doc["overhead_us"] = self.overhead_us
        return json.dumps(doc, indent=2) + "\n"


@dataclass
class TimingReport:
    instruction_counts: dict[str, int]
    latency_us: float
    throughput_fps: float

    @property
    def throughput_fps_floor(self) -> int:
        if math.isinf(self.throughput_fps):
            raise CostError("unbounded throughput has no integer floor")
        return math.floor(self.throughput_fps)


def estimate(program: PpaProgram, cost: CostModel) -> TimingReport:
    """Latency = overhead + sum of per-instruction costs; fps = 1e6/latency.

    Zero latency reports infinite throughput as a sentinel.
    """
    counts: dict[str, int] = {}
    for ins in program.instructions:
        counts[ins.opcode] = counts.get(ins.opcode, 0) + 1
    missing = sorted(set(counts) - set(cost.costs))
    if missing:
        raise CostError(f"cost table missing opcode(s): {', '.join(missing)}")
    latency = cost.overhead_us + sum(cost.costs[op] * n for op, n in counts.items())
    fps = math.inf if latency == 0 else 1e6 / latency
    return TimingReport(counts, latency, fps)
