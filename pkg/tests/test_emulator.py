import pytest

import programs as P
from cfattest.emulator import (AttackError, AttackSpec, CycleLimitExceeded,
                               EmulatorError, run, trace_from_jsonl)
from cfattest.isa import Kind, parse_program


class TestExecution:
    def test_straight_line(self):
        t = run(P.prog(P.STRAIGHT_LINE, "s"), [])
        assert [e.pc for e in t.events] == [0x100, 0x104, 0x108]
        assert [e.cycle for e in t.events] == [0, 1, 2]
        assert t.events[0].next_pc == 0x104
        assert t.fault is None

    def test_while_if_else_single_iteration(self):
        # k=1, selector 0: then-branch once, exit, tail call, halt
        t = run(P.prog(P.WHILE_IF_ELSE, "w"), [1, 0])
        pcs = [e.pc for e in t.events]
        assert pcs == [0x100, 0x104, 0x108, 0x10C, 0x110, 0x114, 0x118, 0x11C,
                       0x124, 0x128, 0x108, 0x12C, 0x138, 0x130, 0x134]
        by_pc = {e.pc: e for e in t.events[:10]}
        assert by_pc[0x108].taken is False          # header not taken on iter 1
        assert by_pc[0x114].taken is False          # selector 0: fallthrough
        assert t.events[10].taken is True           # header exit
        assert t.events[11].next_pc == 0x138        # jal -> tail
        assert t.events[12].next_pc == 0x130        # ret -> jal+4

    def test_deterministic(self):
        p = P.prog(P.WHILE_IF_ELSE, "w")
        a = run(p, [3, 0, 1, 0]).to_jsonl()
        b = run(p, [3, 0, 1, 0]).to_jsonl()
        assert a == b

    def test_blt_signed(self):
        src = """
main:
    addi r1, r0, -1
    li r2, 0
    blt r1, r2, neg
    li r3, 1
    j end
neg:
    li r3, 2
end:
    st r3, [r0+0]
    halt
"""
        t = run(parse_program(src), [])
        blt = next(e for e in t.events if e.instr.mnemonic == "blt")
        assert blt.taken is True  # -1 < 0 under signed compare

    def test_follows_static_edges(self):
        # attack-free runs only traverse CFG-sanctioned successors
        for src, inp in [(P.WHILE_IF_ELSE, [3, 1, 0, 1]),
                         (P.AUTH_THEN_WORK, [42, 3]),
                         (P.NESTED_2, [2, 2])]:
            p = P.prog(src, "x")
            for e in run(p, inp).events:
                k = e.instr.kind
                if k is Kind.COND_BRANCH:
                    assert e.next_pc in (e.instr.target, e.pc + 4)
                elif k in (Kind.DIRECT_JUMP, Kind.LINKING_JUMP):
                    assert e.next_pc == e.instr.target
                elif k is Kind.HALT:
                    assert e.next_pc == e.pc
                elif not e.instr.is_control:
                    assert e.next_pc == e.pc + 4

    def test_observer_receives_all_events_without_altering_trace(self):
        p = P.prog(P.WHILE_IF_ELSE, "w")
        seen = []
        t1 = run(p, [2, 1, 0], observer=seen.append)
        t2 = run(p, [2, 1, 0])
        assert seen == t1.events
        assert t1.to_jsonl() == t2.to_jsonl()


class TestFaults:
    def test_data_access_fault(self):
        src = "main:\n    li r1, 100000\n    ld r2, [r1+0]\n    halt\n"
        t = run(parse_program(src), [])
        assert t.fault == "data-access-out-of-range:100000"
        assert t.events[-1].instr.mnemonic == "ld"

    def test_pc_fault_via_indirect(self):
        src = "main:\n    li r1, 0\n    jr r1\n    halt\n"
        t = run(parse_program(src), [])
        assert t.fault == "pc-out-of-range:0x0"
        assert t.events[-1].instr.mnemonic == "jr"

    def test_cycle_cap(self):
        src = "main:\nloop:\n    j loop\n    halt\n"
        with pytest.raises(CycleLimitExceeded):
            run(parse_program(src), [], cycle_cap=100)

    def test_input_exceeding_memory(self):
        with pytest.raises(EmulatorError):
            run(P.prog(P.STRAIGHT_LINE, "s"), [0] * 10, data_mem_words=4)


class TestAttacks:
    def test_reg_attack_by_pc_trigger_fires_once(self):
        p = P.prog(P.WHILE_IF_ELSE, "w")
        atk = AttackSpec("corrupt-loop-counter", {"pc": P.WHILE_LOOP_ENTRY},
                         {"reg": 2, "value": 2})
        t = run(p, [6, 0, 0, 0, 0, 0, 0], atk)
        # bound corrupted 6 -> 2 at first header arrival: 2 iterations
        headers = [e for e in t.events if e.pc == P.WHILE_LOOP_ENTRY]
        assert len(headers) == 3 and headers[-1].taken is True

    def test_mem_attack_by_cycle(self):
        p = P.prog(P.AUTH_THEN_WORK, "a")
        atk = AttackSpec("corrupt-decision-var", {"cycle": 0}, {"mem": 0, "value": 42})
        t = run(p, [7, 1], atk)
        grant_beq = next(e for e in t.events if e.instr.mnemonic == "beq" and e.pc == 0x124)
        assert grant_beq.taken is True  # forged credential

    def test_ra_attack(self):
        p = P.prog(P.WHILE_IF_ELSE, "w")
        atk = AttackSpec("corrupt-code-pointer", {"pc": P.WHILE_RET_ADDR},
                         {"reg": "ra", "value": P.WHILE_HALT_ADDR})
        t = run(p, [1, 0], atk)
        ret = next(e for e in t.events if e.instr.mnemonic == "ret")
        assert ret.next_pc == P.WHILE_HALT_ADDR
        assert t.fault is None

    @pytest.mark.parametrize("kind,trigger,payload", [
        ("nonsense", {"cycle": 0}, {"reg": 1, "value": 0}),
        ("corrupt-decision-var", {"cycle": 0, "pc": 0x100}, {"reg": 1, "value": 0}),
        ("corrupt-decision-var", {"cycle": 0}, {"reg": 1, "mem": 0, "value": 0}),
        ("corrupt-decision-var", {"cycle": 0}, {"reg": 1}),
        ("corrupt-code-pointer", {"cycle": 0}, {"code": 0, "value": 0}),
    ])
    def test_invalid_attack_specs(self, kind, trigger, payload):
        with pytest.raises(AttackError):
            AttackSpec(kind, trigger, payload)

    def test_attack_json_round_trip(self):
        atk = AttackSpec("corrupt-loop-counter", {"pc": 0x108}, {"reg": 2, "value": 3})
        assert AttackSpec.from_json(atk.to_json()) == atk


class TestTraceSerialization:
    def test_jsonl_round_trip(self):
        p = P.prog(P.WHILE_IF_ELSE, "w")
        t = run(p, [2, 1, 0])
        t2 = trace_from_jsonl(t.to_jsonl(), p)
        assert t2.program_id == t.program_id
        assert t2.input == t.input
        assert t2.events == t.events
        assert t2.fault == t.fault

    def test_jsonl_detects_program_mismatch(self):
        t = run(P.prog(P.WHILE_IF_ELSE, "w"), [1, 0])
        with pytest.raises(EmulatorError):
            trace_from_jsonl(t.to_jsonl(), P.prog(P.STRAIGHT_LINE, "s"))
