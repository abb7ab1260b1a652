"""Challenge-response attestation: measurement, report signing, verification.

The prover runs the program on the verifier-chosen input, measures the
control flow into an authenticator A plus loop metadata L, and signs the
canonical bytes of (A, L) together with the challenge nonce.  The verifier
checks the binary hash, freshness and signature, structurally decodes every
reported loop path against the CFG, and replays the execution to compare
(A, L) against its own measurement.  Prover and verifier share one
measurement implementation, so any asymmetry is structurally impossible.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey, Ed25519PublicKey)

from .isa import WORD, Cfg, Kind, Program, build_cfg
from .emulator import AttackSpec, Trace, run
from .branch_filter import detect_loops, filter_trace
from .hash_engine import digest_pairs
from .loop_monitor import (FAULT_MARKER_ENTRY, PARENT_NONE, LoopMonitor,
                           LoopSession, MonitorConfig, PathId,
                           fault_marker_session)

MAGIC = b"CFATT1"
NONCE_LEN = 32
DIGEST_LEN = 64

# reject reasons
BAD_SIGNATURE = "BadSignature"
STALE_NONCE = "StaleNonce"
INVALID_LOOP_PATH = "InvalidLoopPath"
AUTHENTICATOR_MISMATCH = "AuthenticatorMismatch"
METADATA_MISMATCH = "MetadataMismatch"
MALFORMED = "Malformed"
PROGRAM_HASH_MISMATCH = "ProgramHashMismatch"


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class Challenge:
    program_id: str
    input: tuple[int, ...]
    nonce: bytes

    def __post_init__(self):
        if len(self.nonce) != NONCE_LEN:
            raise ProtocolError(f"nonce must be {NONCE_LEN} bytes")

    def to_json(self) -> dict:
        return {"program_id": self.program_id, "input": list(self.input),
                "nonce_hex": self.nonce.hex()}

    @classmethod
    def from_json(cls, d: dict) -> "Challenge":
        return cls(d["program_id"], tuple(d["input"]), bytes.fromhex(d["nonce_hex"]))

    @classmethod
    def fresh(cls, program_id: str, input_words: list[int]) -> "Challenge":
        return cls(program_id, tuple(input_words), os.urandom(NONCE_LEN))


@dataclass(frozen=True)
class ProgramPath:
    authenticator: bytes                 # 64-byte SHA-3-512 digest A
    sessions: tuple[LoopSession, ...]    # metadata L

    def __post_init__(self):
        if len(self.authenticator) != DIGEST_LEN:
            raise ProtocolError("authenticator must be 64 bytes")


@dataclass(frozen=True)
class Report:
    program_id: str
    program_hash: bytes
    path: ProgramPath
    nonce: bytes
    signature: bytes

    def to_json(self) -> dict:
        return {
            "program_id": self.program_id,
            "program_hash_hex": self.program_hash.hex(),
            "nonce_hex": self.nonce.hex(),
            "A_hex": self.path.authenticator.hex(),
            "L": [s.to_json() for s in self.path.sessions],
            "sig_hex": self.signature.hex(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "Report":
        return cls(
            program_id=d["program_id"],
            program_hash=bytes.fromhex(d["program_hash_hex"]),
            path=ProgramPath(bytes.fromhex(d["A_hex"]),
                             tuple(LoopSession.from_json(s) for s in d["L"])),
            nonce=bytes.fromhex(d["nonce_hex"]),
            signature=bytes.fromhex(d["sig_hex"]),
        )


# --- keys --------------------------------------------------------------------

def generate_keypair() -> tuple[bytes, bytes]:
    """Ed25519 (seed, public) pair, 32 bytes each."""
    sk = Ed25519PrivateKey.generate()
    seed = sk.private_bytes_raw()
    pk = sk.public_key().public_bytes_raw()
    return seed, pk


def sign(message: bytes, sk_seed: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(sk_seed).sign(message)


def signature_valid(message: bytes, signature: bytes, pk: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(pk).verify(signature, message)
        return True
    except InvalidSignature:
        return False


def program_hash(program: Program) -> bytes:
    """Static measurement of the program text (boot-time binary attestation)."""
    return hashlib.sha3_512(program.canonical_bytes()).digest()


# --- canonical serialization ---------------------------------------------------

def serialize_metadata(sessions: tuple[LoopSession, ...]) -> bytes:
    out = [struct.pack(">I", len(sessions))]
    for s in sessions:
        parent = PARENT_NONE if s.parent is None else s.parent
        out.append(struct.pack(">IBIH", s.loop_entry, s.depth, parent, len(s.paths)))
        for pid, count in s.paths:
            out.append(struct.pack(">B", len(pid)))
            out.append(pid.packed())
            out.append(struct.pack(">Q", count))
        out.append(struct.pack(">B", len(s.indirect_targets)))
        for t in s.indirect_targets:
            out.append(struct.pack(">I", t))
    return b"".join(out)


def parse_metadata(data: bytes) -> tuple[LoopSession, ...]:
    off = 0

    def take(fmt: str):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(data):
            raise ProtocolError("truncated metadata")
        vals = struct.unpack_from(fmt, data, off)
        off += size
        return vals

    (count,) = take(">I")
    sessions = []
    for _ in range(count):
        entry, depth, parent, npaths = take(">IBIH")
        paths = []
        for _ in range(npaths):
            (bit_len,) = take(">B")
            nbytes = (bit_len + 7) // 8
            if off + nbytes > len(data):
                raise ProtocolError("truncated path bits")
            pid = PathId.unpack(data[off:off + nbytes], bit_len)
            off += nbytes
            (c,) = take(">Q")
            paths.append((pid, c))
        (ntargets,) = take(">B")
        targets = [take(">I")[0] for _ in range(ntargets)]
        sessions.append(LoopSession(entry, depth, None if parent == PARENT_NONE else parent,
                                    paths, targets))
    if off != len(data):
        raise ProtocolError("trailing bytes in metadata")
    return tuple(sessions)


def canonical_serialize(path: ProgramPath, nonce: bytes) -> bytes:
    """Byte string the report signature covers: magic || A || L || N."""
    if len(nonce) != NONCE_LEN:
        raise ProtocolError(f"nonce must be {NONCE_LEN} bytes")
    return MAGIC + path.authenticator + serialize_metadata(path.sessions) + nonce


def canonical_parse(data: bytes) -> tuple[ProgramPath, bytes]:
    if data[:len(MAGIC)] != MAGIC:
        raise ProtocolError("bad magic")
    a = data[len(MAGIC):len(MAGIC) + DIGEST_LEN]
    if len(a) != DIGEST_LEN or len(data) < len(MAGIC) + DIGEST_LEN + NONCE_LEN:
        raise ProtocolError("truncated")
    nonce = data[-NONCE_LEN:]
    sessions = parse_metadata(data[len(MAGIC) + DIGEST_LEN:-NONCE_LEN])
    return ProgramPath(a, sessions), nonce


# --- measurement ---------------------------------------------------------------

def measure(trace: Trace, config: MonitorConfig = MonitorConfig()) -> ProgramPath:
    """Run the full filter -> loop detection -> monitor -> hash pipeline."""
    events = filter_trace(trace)
    annotated = detect_loops(events, config.max_depth)
    stream, sessions = LoopMonitor(config).process(annotated)
    if trace.fault is not None:
        sessions.append(fault_marker_session())
    return ProgramPath(digest_pairs(stream), tuple(sessions))


# --- prover ---------------------------------------------------------------------

def prover_attest(
    program: Program,
    challenge: Challenge,
    sk_seed: bytes,
    attack: Optional[AttackSpec] = None,
    config: MonitorConfig = MonitorConfig(),
) -> Report:
    """Execute under the challenge input and sign the measured path.

    The attack parameter models adversary-controlled inputs corrupting the
    run; the measurement and signing themselves are performed faithfully.
    """
    if challenge.program_id != program.id:
        raise ProtocolError(
            f"challenge targets {challenge.program_id!r}, prover has {program.id!r}")
    trace = run(program, list(challenge.input), attack)
    path = measure(trace, config)
    sig = sign(canonical_serialize(path, challenge.nonce), sk_seed)
    return Report(program.id, program_hash(program), path, challenge.nonce, sig)


# --- verifier -------------------------------------------------------------------

class NonceStore:
    """Persistent set of consumed nonces; one accepted report per nonce."""

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self._used: set[str] = set()
        if path and os.path.exists(path):
            with open(path) as f:
                self._used = set(json.load(f))

    def used(self, nonce: bytes) -> bool:
        return nonce.hex() in self._used

    def consume(self, nonce: bytes) -> None:
        self._used.add(nonce.hex())
        if self.path:
            with open(self.path, "w") as f:
                json.dump(sorted(self._used), f)


@dataclass(frozen=True)
class VerifyResult:
    accepted: bool
    reason: Optional[str] = None      # first failure in check order
    failures: tuple[str, ...] = ()    # all distinguishing failures observed

    def to_json(self) -> dict:
        return {"accepted": self.accepted, "reason": self.reason,
                "failures": list(self.failures)}


PATH_VALID_CYCLE = "valid-cycle"
PATH_VALID_EXIT = "valid-exit"
PATH_UNVERIFIABLE = "unverifiable"
PATH_INVALID = "invalid"

_DECODE_STEP_CAP = 4096


_DECODE_RANK = {PATH_INVALID: 0, PATH_UNVERIFIABLE: 1,
                PATH_VALID_EXIT: 2, PATH_VALID_CYCLE: 2}


def decode_loop_path(
    session: LoopSession,
    pid: PathId,
    program: Program,
    cfg: Cfg,
    n: int = 4,
) -> str:
    """Structurally decode one loop path against the CFG.

    Replays the bit-contribution rules as a walk from the session's loop
    entry; indirect codes resolve through the session's target table.  A
    valid path either cycles back to the entry or leaves the loop body.

    A statically nested loop normally keeps its bits in its own session, so
    the walk resumes at its exit node; but a static loop that never iterates
    in the whole run is not tracked dynamically and its header bit stays in
    the enclosing path.  The decoder cannot tell the two apart from the CFG
    alone, so it accepts a path if either continuation decodes.
    """
    entries = cfg.loop_entries()
    if session.loop_entry not in entries:
        return PATH_UNVERIFIABLE  # e.g. recursion sessions: no static backedge
    entry = session.loop_entry
    body_end = entries[entry]
    bits = pid.bits
    budget = [_DECODE_STEP_CAP]

    def walk(addr: int, i: int, call_stack: tuple[int, ...],
             started: bool, no_skip_at: Optional[int] = None) -> str:
        while True:
            if budget[0] <= 0:
                return PATH_UNVERIFIABLE
            budget[0] -= 1
            if started and addr == entry:
                return PATH_INVALID if i < len(bits) else PATH_VALID_CYCLE
            if not call_stack and started and not (entry <= addr <= body_end):
                return PATH_INVALID if i < len(bits) else PATH_VALID_EXIT
            if addr != entry and addr != no_skip_at and addr in entries:
                # inner loop was active: resume at its exit node
                r1 = walk(entries[addr] + WORD, i, call_stack, started)
                if _DECODE_RANK[r1] == 2:
                    return r1
                # inner loop never ran: decode its header bit here
                r2 = walk(addr, i, call_stack, started, no_skip_at=addr)
                return r1 if _DECODE_RANK[r1] >= _DECODE_RANK[r2] else r2
            no_skip_at = None
            ins = program.instr_at(addr)
            if ins is None:
                return PATH_INVALID
            if ins.kind is Kind.HALT:
                return PATH_VALID_EXIT if i == len(bits) else PATH_INVALID
            if not ins.is_control:
                addr += WORD
                continue

            started = True
            if ins.indirect:
                if i + n > len(bits):
                    return PATH_INVALID
                code = int(bits[i:i + n], 2)
                i += n
                if code == 0:
                    return PATH_UNVERIFIABLE  # overflow code: target not reported
                if code > len(session.indirect_targets):
                    return PATH_INVALID
                target = session.indirect_targets[code - 1]
                if program.instr_at(target) is None:
                    return PATH_INVALID
                if ins.kind is Kind.RETURN:
                    if call_stack:
                        if call_stack[-1] != target:
                            return PATH_INVALID
                        call_stack = call_stack[:-1]
                elif ins.kind is Kind.LINKING_INDIRECT_JUMP:
                    call_stack = call_stack + (ins.addr + WORD,)
                addr = target
            elif ins.kind is Kind.COND_BRANCH:
                if i >= len(bits):
                    return PATH_INVALID  # path ends mid-body
                addr = ins.target if bits[i] == "1" else ins.addr + WORD
                i += 1
            else:  # direct jump or direct call
                if i >= len(bits) or bits[i] != "1":
                    return PATH_INVALID
                i += 1
                if ins.kind is Kind.LINKING_JUMP:
                    call_stack = call_stack + (ins.addr + WORD,)
                addr = ins.target

    return walk(entry, 0, (), False)


def check_loop_paths(
    sessions: tuple[LoopSession, ...],
    program: Program,
    cfg: Cfg,
    config: MonitorConfig,
) -> tuple[bool, list[str]]:
    """Decode every reported path; returns (all structurally valid, notes)."""
    notes = []
    ok = True
    for idx, s in enumerate(sessions):
        if s.loop_entry == FAULT_MARKER_ENTRY:
            ok = False
            notes.append(f"session {idx}: fault marker")
            continue
        for pid, _count in s.paths:
            status = decode_loop_path(s, pid, program, cfg, config.n)
            if status == PATH_INVALID:
                ok = False
                notes.append(f"session {idx} path {pid.bits!r}: invalid")
            elif status == PATH_UNVERIFIABLE:
                notes.append(f"session {idx} path {pid.bits!r}: unverifiable")
    return ok, notes


def verify(
    report: Report,
    challenge: Challenge,
    pk: bytes,
    program: Program,
    cfg: Optional[Cfg] = None,
    config: MonitorConfig = MonitorConfig(),
    nonce_store: Optional[NonceStore] = None,
) -> VerifyResult:
    """Full verifier: static hash, freshness, signature, structure, replay.

    The reported reason is the first failing check in order; `failures`
    additionally lists every distinguishing check that failed, so callers can
    see e.g. that a rogue in-loop edge both breaks the loop structure and
    changes the authenticator.
    """
    if cfg is None:
        cfg = build_cfg(program)

    if report.program_id != program.id or challenge.program_id != program.id:
        return VerifyResult(False, MALFORMED, (MALFORMED,))
    if report.program_hash != program_hash(program):
        return VerifyResult(False, PROGRAM_HASH_MISMATCH, (PROGRAM_HASH_MISMATCH,))
    if report.nonce != challenge.nonce:
        return VerifyResult(False, STALE_NONCE, (STALE_NONCE,))
    if nonce_store is not None and nonce_store.used(challenge.nonce):
        return VerifyResult(False, STALE_NONCE, (STALE_NONCE,))
    message = canonical_serialize(report.path, challenge.nonce)
    if not signature_valid(message, report.signature, pk):
        return VerifyResult(False, BAD_SIGNATURE, (BAD_SIGNATURE,))

    failures: list[str] = []

    structural_ok, _notes = check_loop_paths(report.path.sessions, program, cfg, config)
    if not structural_ok:
        failures.append(INVALID_LOOP_PATH)

    expected = measure(run(program, list(challenge.input)), config)
    if report.path.authenticator != expected.authenticator:
        failures.append(AUTHENTICATOR_MISMATCH)
    if report.path.sessions != expected.sessions:
        failures.append(METADATA_MISMATCH)

    if failures:
        return VerifyResult(False, failures[0], tuple(failures))
    if nonce_store is not None:
        nonce_store.consume(challenge.nonce)
    return VerifyResult(True)
