"""Streaming SHA-3-512 authenticator over (Src, Dest) pairs, plus a
discrete-event model of the absorb cadence (9 words per 576-bit block,
3 busy cycles per permutation, FIFO input buffer)."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

BLOCK_WORDS = 9       # 9 x 64 bit = 576-bit message block
BUSY_CYCLES = 3

class HashUsageError(RuntimeError):
    pass


def pair_bytes(src: int, dest: int) -> bytes:
    """64-bit measurement word: src || dest, big-endian."""
    return struct.pack(">II", src & 0xFFFF_FFFF, dest & 0xFFFF_FFFF)


class StreamingAuthenticator:
    """Accumulates the measurement stream; digest equals the one-shot hash."""

    def __init__(self):
        self._h = hashlib.sha3_512()
        self._finalized = False
        self.words_absorbed = 0

    def absorb(self, src: int, dest: int) -> None:
        if self._finalized:
            raise HashUsageError("absorb after finalize")
        self._h.update(pair_bytes(src, dest))
        self.words_absorbed += 1

    def finalize(self) -> bytes:
        if self._finalized:
            raise HashUsageError("finalize called twice")
        self._finalized = True
        return self._h.digest()


def digest_pairs(pairs: list[tuple[int, int]]) -> bytes:
    """One-shot authenticator over a complete measurement stream."""
    h = hashlib.sha3_512()
    for s, d in pairs:
        h.update(pair_bytes(s, d))
    return h.digest()


@dataclass(frozen=True)
class AbsorbResult:
    max_occupancy: int
    overflow: bool
    completion_cycle: int

    def to_json(self) -> dict:
        return {"max_occupancy": self.max_occupancy, "overflow": self.overflow,
                "completion_cycle": self.completion_cycle}


def simulate_absorb(arrival_cycles: list[int], buffer_depth: int) -> AbsorbResult:
    """Exact discrete-event run of the absorb/busy cadence.

    One word can be absorbed per non-busy cycle; after every 9th absorbed
    word the engine is busy for 3 cycles.  Arrivals that cannot be absorbed
    queue in a FIFO buffer of the given depth; exceeding it is reported as
    overflow (words are still accounted for, never dropped).
    """
    if any(b < a for a, b in zip(arrival_cycles, arrival_cycles[1:])):
        raise ValueError("arrival cycles must be non-decreasing")
    if len(arrival_cycles) != len(set(arrival_cycles)):
        raise ValueError("at most one arrival per cycle")

    queue = 0
    in_block = 0
    busy_until = -1  # last busy cycle
    max_occ = 0
    overflow = False
    completion = -1
    arrivals = iter(arrival_cycles)
    nxt = next(arrivals, None)
    t = 0
    while nxt is not None or queue > 0:
        if nxt == t:
            queue += 1
            nxt = next(arrivals, None)
        if t > busy_until and queue > 0:
            queue -= 1
            completion = t
            in_block += 1
            if in_block == BLOCK_WORDS:
                in_block = 0
                busy_until = t + BUSY_CYCLES
        if queue > max_occ:
            max_occ = queue
        if queue > buffer_depth:
            overflow = True
        t += 1
    return AbsorbResult(max_occ, overflow, completion)
