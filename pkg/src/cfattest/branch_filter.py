"""Branch filtering and runtime loop detection over the execution trace.

`filter_trace` keeps exactly the control-flow events.  `detect_loops`
classifies non-linking backward branches as loop backedges (link-register
heuristic), tracks entry/iteration/exit per nesting depth, and annotates each
branch event with the depth of the innermost active loop.

Loop discovery is a separate first pass over the stream: the set of
(entry, backedge) pairs a run exhibits is learned before annotation, so the
very first traversal of a loop is attributed to the loop exactly like later
ones.  Both prover and verifier share this code, so the measurement stays
symmetric; it also keeps the authenticator independent of iteration count,
which a detect-on-first-backedge scheme would break for the first iteration.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Union

from .isa import WORD, Kind
from .emulator import Trace, TraceEvent

DEFAULT_MAX_DEPTH = 3


class BranchKind(Enum):
    COND_TAKEN = "cond_taken"
    COND_NOT_TAKEN = "cond_not_taken"
    DIRECT_JUMP = "direct_jump"
    INDIRECT_JUMP = "indirect_jump"
    CALL = "call"
    RETURN = "return"


@dataclass
class BranchEvent:
    src: int
    dest: int
    kind: BranchKind
    linking: bool
    indirect: bool
    cycle: int
    loop_depth: int = 0  # 0 = not attributed to any loop

    @property
    def pair(self) -> tuple[int, int]:
        return (self.src, self.dest)


@dataclass
class LoopContext:
    entry_addr: int
    backedge_addr: int
    exit_addr: int
    depth: int
    call_depth_at_entry: int
    recursive: bool = False
    degraded: bool = False  # beyond max_depth: tracked but not measured as a loop

    def contains(self, addr: int) -> bool:
        return self.entry_addr <= addr <= self.backedge_addr


class LoopStatusKind(Enum):
    ENTER = "enter"
    ITERATION_BOUNDARY = "iteration_boundary"
    EXIT = "exit"


@dataclass
class LoopStatusEvent:
    kind: LoopStatusKind
    loop: LoopContext
    at_cycle: int


StreamItem = tuple[str, Union[BranchEvent, LoopStatusEvent]]  # ("branch"|"loop", ev)


def filter_trace(trace: Trace) -> list[BranchEvent]:
    """Keep control-flow events only, in order, with kind/linking flags."""
    out = []
    for ev in trace.events:
        k = ev.instr.kind
        if k is Kind.COND_BRANCH:
            bk = BranchKind.COND_TAKEN if ev.taken else BranchKind.COND_NOT_TAKEN
        elif k is Kind.DIRECT_JUMP:
            bk = BranchKind.DIRECT_JUMP
        elif k in (Kind.LINKING_JUMP, Kind.LINKING_INDIRECT_JUMP):
            bk = BranchKind.CALL
        elif k is Kind.INDIRECT_JUMP:
            bk = BranchKind.INDIRECT_JUMP
        elif k is Kind.RETURN:
            bk = BranchKind.RETURN
        else:
            continue
        out.append(BranchEvent(
            src=ev.pc, dest=ev.next_pc, kind=bk,
            linking=ev.instr.linking, indirect=ev.instr.indirect, cycle=ev.cycle))
    return out


def _discover_loops(events: Iterable[BranchEvent]) -> tuple[dict[int, int], dict[int, int]]:
    """First pass: entry -> largest backedge src, plus direct-recursion entries."""
    loops: dict[int, int] = {}
    recursive: dict[int, int] = {}
    call_targets: list[int] = []
    for ev in events:
        if ev.linking:
            if ev.dest in call_targets:
                recursive[ev.dest] = max(recursive.get(ev.dest, 0), ev.src)
            call_targets.append(ev.dest)
        elif ev.kind is BranchKind.RETURN:
            if call_targets:
                call_targets.pop()
        if (not ev.linking and ev.kind is not BranchKind.RETURN and ev.dest < ev.src):
            loops[ev.dest] = max(loops.get(ev.dest, 0), ev.src)
    return loops, recursive


def detect_loops(events: list[BranchEvent], max_depth: int = DEFAULT_MAX_DEPTH) -> list[StreamItem]:
    """Annotate the branch stream with loop status events and depths."""
    loops, recursive = _discover_loops(events)
    out: list[StreamItem] = []
    stack: list[LoopContext] = []
    call_depth = 0
    call_targets: list[int] = []

    def active_entries() -> set[int]:
        return {c.entry_addr for c in stack}

    def open_ctx(entry: int, backedge: int, rec: bool, cycle: int) -> None:
        depth = len(stack) + 1
        degraded = depth > max_depth or (bool(stack) and stack[-1].degraded)
        ctx = LoopContext(entry, backedge, backedge + WORD, depth, call_depth,
                          recursive=rec, degraded=degraded)
        stack.append(ctx)
        if not degraded:
            out.append(("loop", LoopStatusEvent(LoopStatusKind.ENTER, ctx, cycle)))

    def close_ctx(cycle: int) -> None:
        ctx = stack.pop()
        if not ctx.degraded:
            out.append(("loop", LoopStatusEvent(LoopStatusKind.EXIT, ctx, cycle)))

    def left(ctx: LoopContext, pc: int) -> bool:
        """Has control at pc (current call depth) left this context?"""
        if call_depth < ctx.call_depth_at_entry:
            return True
        if ctx.recursive:
            return False
        return call_depth == ctx.call_depth_at_entry and not ctx.contains(pc)

    for ev in events:
        # control left open loops before this event (fallthrough past the body)
        while stack and left(stack[-1], ev.src):
            close_ctx(ev.cycle)

        # fallthrough arrival: control is inside a known loop body with no context open
        while True:
            cands = sorted(
                e for e, b in loops.items()
                if e <= ev.src <= b and e not in active_entries()
            )
            if not cands:
                break
            open_ctx(cands[0], loops[cands[0]], False, ev.cycle)

        # direct recursion opens (or iterates) a loop context at the callee entry
        recursion_iter = False
        if ev.linking and ev.dest in call_targets and ev.dest in recursive:
            if any(c.entry_addr == ev.dest and c.recursive for c in stack):
                recursion_iter = True
            elif ev.dest not in active_entries():
                open_ctx(ev.dest, recursive[ev.dest], True, ev.cycle)

        # attribute and emit; callee branches count toward the innermost loop
        ev.loop_depth = 0
        if stack and not stack[-1].degraded:
            ev.loop_depth = stack[-1].depth
        out.append(("branch", ev))

        if recursion_iter:
            for c in reversed(stack):
                if c.entry_addr == ev.dest and c.recursive and not c.degraded:
                    out.append(("loop", LoopStatusEvent(LoopStatusKind.ITERATION_BOUNDARY, c, ev.cycle)))
                    break

        # call-depth bookkeeping
        if ev.linking:
            call_targets.append(ev.dest)
            call_depth += 1
        elif ev.kind is BranchKind.RETURN:
            if call_targets:
                call_targets.pop()
            call_depth = max(0, call_depth - 1)

        # this event's destination closes loops it lands outside of
        while stack and left(stack[-1], ev.dest):
            close_ctx(ev.cycle)

        if not ev.linking:
            top = stack[-1] if stack else None
            if top and top.entry_addr == ev.dest and not top.recursive:
                # backedge (or continue) re-entering the entry node
                if not top.degraded:
                    out.append(("loop", LoopStatusEvent(LoopStatusKind.ITERATION_BOUNDARY, top, ev.cycle)))
            elif ev.dest in loops and ev.dest not in active_entries():
                # arrival branch from outside; the branch itself is not part of the loop
                open_ctx(ev.dest, loops[ev.dest], False, ev.cycle)

    final_cycle = events[-1].cycle if events else 0
    while stack:  # implicit exits at end of trace
        close_ctx(final_cycle)
    return out
