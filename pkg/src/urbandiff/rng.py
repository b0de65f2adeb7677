"""Portable seeded randomness for prompt and dataset choices.

PCG32 (XSH-RR output, 64-bit LCG state) with the reference constants, so a port
in any language reproduces every template/shift/split choice bit for bit.
"""
import hashlib

_MULT = 6364136223846793005
_MASK64 = (1 << 64) - 1
_MASK32 = (1 << 32) - 1
DEFAULT_STREAM = 1442695040888963407


class PCG32:
    def __init__(self, seed: int, stream: int = DEFAULT_STREAM):
        self._inc = ((stream << 1) | 1) & _MASK64
        self._state = 0
        self.next_u32()
        self._state = (self._state + (seed & _MASK64)) & _MASK64
        self.next_u32()

    def next_u32(self) -> int:
        old = self._state
        self._state = (old * _MULT + self._inc) & _MASK64
        xorshifted = (((old >> 18) ^ old) >> 27) & _MASK32
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & _MASK32

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection (the reference bounded draw)."""
        if n <= 0:
            raise ValueError("n must be positive")
        threshold = ((1 << 32) - n) % n
        while True:
            r = self.next_u32()
            if r >= threshold:
                return r % n

    def choice(self, seq):
        return seq[self.below(len(seq))]

    def sample(self, seq, k: int) -> list:
        """k distinct items, partial Fisher-Yates over a copy of seq."""
        if k > len(seq):
            raise ValueError(f"cannot draw {k} distinct items from {len(seq)}")
        pool = list(seq)
        for i in range(k):
            j = i + self.below(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def shuffle(self, seq) -> list:
        return self.sample(seq, len(seq))


def derive_seed(base: int, *keys) -> int:
    """Stable 64-bit sub-seed from a base seed and any printable keys."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(base)).encode())
    for k in keys:
        h.update(b"\x1f")
        h.update(str(k).encode())
    return int.from_bytes(h.digest(), "little")
