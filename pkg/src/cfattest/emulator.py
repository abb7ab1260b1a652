"""Deterministic interpreter producing a per-cycle trace, with attack hooks.

One instruction retires per cycle.  The trace records (pc, instruction,
outcome) for every cycle, which is the stream the measurement pipeline taps.
Attack injection mutates writable state only (registers, link register, data
memory); program text is immutable.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .isa import WORD, Kind, Instruction, Program

DEFAULT_CYCLE_CAP = 1_000_000
DEFAULT_DATA_WORDS = 4096
MASK32 = 0xFFFF_FFFF

ATTACK_KINDS = ("corrupt-decision-var", "corrupt-loop-counter", "corrupt-code-pointer")


class EmulatorError(RuntimeError):
    pass


class CycleLimitExceeded(EmulatorError):
    pass


class AttackError(ValueError):
    pass


@dataclass
class MachineState:
    pc: int
    regs: list[int]           # 16 general registers
    ra: int                   # link register
    data_mem: list[int]
    cycle: int = 0


@dataclass(frozen=True)
class TraceEvent:
    cycle: int
    pc: int
    instr: Instruction
    taken: Optional[bool]     # conditional branches only
    next_pc: int

    def to_json(self) -> dict:
        return {
            "cycle": self.cycle,
            "pc": f"0x{self.pc:x}",
            "mnemonic": self.instr.mnemonic,
            "taken": self.taken,
            "next_pc": f"0x{self.next_pc:x}",
        }


@dataclass(frozen=True)
class AttackSpec:
    kind: str                       # one of ATTACK_KINDS
    trigger: dict                   # {"cycle": n} or {"pc": addr}
    payload: dict                   # {"reg": i|"ra", "value": v} or {"mem": word_index, "value": v}

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise AttackError(f"unknown attack kind {self.kind!r}")
        if set(self.trigger) not in ({"cycle"}, {"pc"}):
            raise AttackError("trigger must be exactly one of cycle/pc")
        if "value" not in self.payload or ("reg" in self.payload) == ("mem" in self.payload):
            raise AttackError("payload must name one reg or mem target plus a value")
        if "code" in self.payload:
            raise AttackError("code memory is not writable")

    def to_json(self) -> dict:
        return {"kind": self.kind, "trigger": self.trigger, "payload": self.payload}

    @classmethod
    def from_json(cls, d: dict) -> "AttackSpec":
        return cls(kind=d["kind"], trigger=d["trigger"], payload=d["payload"])


@dataclass
class Trace:
    program_id: str
    input: list[int]
    events: list[TraceEvent]
    fault: Optional[str] = None

    def to_jsonl(self) -> str:
        lines = [json.dumps({"program_id": self.program_id, "input": self.input},
                            sort_keys=True)]
        lines += [json.dumps(ev.to_json(), sort_keys=True) for ev in self.events]
        lines.append(json.dumps({"fault": self.fault}, sort_keys=True))
        return "\n".join(lines) + "\n"


def trace_from_jsonl(text: str, program: Program) -> Trace:
    """Rebuild a Trace from its JSONL form, resolving instructions via program."""
    lines = [json.loads(l) for l in text.splitlines() if l.strip()]
    head, tail = lines[0], lines[-1]
    events = []
    for d in lines[1:-1]:
        pc = int(d["pc"], 16)
        ins = program.instr_at(pc)
        if ins is None or ins.mnemonic != d["mnemonic"]:
            raise EmulatorError(f"trace does not match program at pc 0x{pc:x}")
        events.append(TraceEvent(d["cycle"], pc, ins, d["taken"], int(d["next_pc"], 16)))
    return Trace(head["program_id"], head["input"], events, tail.get("fault"))


def inject(state: MachineState, attack: AttackSpec) -> None:
    """Apply the attack mutation to writable state."""
    value = attack.payload["value"] & MASK32
    if "reg" in attack.payload:
        r = attack.payload["reg"]
        if r == "ra":
            state.ra = value
        elif isinstance(r, int) and 0 <= r < len(state.regs):
            state.regs[r] = value
        else:
            raise AttackError(f"bad register target {r!r}")
    else:
        idx = attack.payload["mem"]
        if not isinstance(idx, int) or not 0 <= idx < len(state.data_mem):
            raise AttackError(f"memory target {idx!r} outside data memory")
        state.data_mem[idx] = value


def _signed(v: int) -> int:
    return v - (1 << 32) if v & 0x8000_0000 else v


def run(
    program: Program,
    input_words: list[int],
    attack: Optional[AttackSpec] = None,
    *,
    data_mem_words: int = DEFAULT_DATA_WORDS,
    cycle_cap: int = DEFAULT_CYCLE_CAP,
    observer: Optional[Callable[[TraceEvent], None]] = None,
) -> Trace:
    """Execute the program on the given input, optionally under attack.

    The optional observer receives each TraceEvent as it retires; attaching
    one never alters the produced trace.
    """
    if len(input_words) > data_mem_words:
        raise EmulatorError("input exceeds data memory")
    mem = [w & MASK32 for w in input_words] + [0] * (data_mem_words - len(input_words))
    state = MachineState(pc=program.entry_point, regs=[0] * 16, ra=0, data_mem=mem)
    trace = Trace(program.id, list(input_words), [])
    fired = False

    def valid_pc(a: int) -> bool:
        return program.instr_at(a) is not None

    while True:
        if state.cycle >= cycle_cap:
            raise CycleLimitExceeded(f"cycle cap {cycle_cap} exceeded")
        if attack is not None and not fired:
            t = attack.trigger
            if t.get("cycle") == state.cycle or t.get("pc") == state.pc:
                inject(state, attack)
                fired = True

        ins = program.instr_at(state.pc)
        if ins is None:
            trace.fault = f"pc-out-of-range:0x{state.pc:x}"
            break

        taken: Optional[bool] = None
        next_pc = state.pc + WORD
        fault: Optional[str] = None

        if ins.kind is Kind.ALU:
            if ins.mnemonic == "add":
                state.regs[ins.rd] = (state.regs[ins.rs1] + state.regs[ins.rs2]) & MASK32
            elif ins.mnemonic == "sub":
                state.regs[ins.rd] = (state.regs[ins.rs1] - state.regs[ins.rs2]) & MASK32
            elif ins.mnemonic == "addi":
                state.regs[ins.rd] = (state.regs[ins.rs1] + ins.imm) & MASK32
            elif ins.mnemonic == "li":
                state.regs[ins.rd] = ins.imm & MASK32
            elif ins.mnemonic == "mv":
                state.regs[ins.rd] = state.regs[ins.rs1]
        elif ins.kind in (Kind.LOAD, Kind.STORE):
            idx = (state.regs[ins.rs1] + ins.imm) & MASK32
            if idx >= len(state.data_mem):
                fault = f"data-access-out-of-range:{idx}"
            elif ins.kind is Kind.LOAD:
                state.regs[ins.rd] = state.data_mem[idx]
            else:
                state.data_mem[idx] = state.regs[ins.rd]
        elif ins.kind is Kind.COND_BRANCH:
            a, b = state.regs[ins.rs1], state.regs[ins.rs2]
            if ins.mnemonic == "beq":
                taken = a == b
            elif ins.mnemonic == "bne":
                taken = a != b
            else:  # blt, signed
                taken = _signed(a) < _signed(b)
            if taken:
                next_pc = ins.target
        elif ins.kind is Kind.DIRECT_JUMP:
            next_pc = ins.target
        elif ins.kind is Kind.LINKING_JUMP:
            state.ra = state.pc + WORD
            next_pc = ins.target
        elif ins.kind is Kind.INDIRECT_JUMP:
            next_pc = state.regs[ins.rs1]
        elif ins.kind is Kind.LINKING_INDIRECT_JUMP:
            target = state.regs[ins.rs1]
            state.ra = state.pc + WORD
            next_pc = target
        elif ins.kind is Kind.RETURN:
            next_pc = state.ra
        elif ins.kind is Kind.HALT:
            next_pc = state.pc

        ev = TraceEvent(state.cycle, state.pc, ins, taken, next_pc)
        trace.events.append(ev)
        if observer is not None:
            observer(ev)

        if ins.kind is Kind.HALT:
            break
        if fault is not None:
            trace.fault = fault
            break
        if not valid_pc(next_pc):
            trace.fault = f"pc-out-of-range:0x{next_pc:x}"
            break
        state.pc = next_pc
        state.cycle += 1

    return trace
