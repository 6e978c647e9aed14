"""Plain Bloom filter with classical sizing and blake2b double hashing."""
from __future__ import annotations

import hashlib
import math


def optimal_params(capacity: int, fp_rate: float) -> tuple[int, int]:
    """(bits, hashes) minimising memory for ``capacity`` items at ``fp_rate``."""
    if capacity <= 0 or not 0 < fp_rate < 1:
        raise ValueError("capacity must be positive and fp_rate in (0, 1)")
    m = math.ceil(-capacity * math.log(fp_rate) / math.log(2) ** 2)
    k = max(1, round(m / capacity * math.log(2)))
    return m, k


class BloomFilter:
    def __init__(self, capacity: int = 10_000, fp_rate: float = 0.01, salt: bytes = b""):
        self.capacity = capacity
        self.fp_rate = fp_rate
        self.nbits, self.nhashes = optimal_params(capacity, fp_rate)
        self._bits = bytearray((self.nbits + 7) // 8)
        self._salt = salt[:16]
        self.count = 0

    def _positions(self, item: bytes):
        d = hashlib.blake2b(item, digest_size=16, salt=self._salt).digest()
        h1 = int.from_bytes(d[:8], "little")
        h2 = int.from_bytes(d[8:], "little") | 1
        m = self.nbits
        return [(h1 + i * h2) % m for i in range(self.nhashes)]

    def add(self, item: bytes) -> None:
        for p in self._positions(item):
            self._bits[p >> 3] |= 1 << (p & 7)
        self.count += 1

    def __contains__(self, item: bytes) -> bool:
        bits = self._bits
        return all(bits[p >> 3] & (1 << (p & 7)) for p in self._positions(item))

    def clear(self) -> None:
        self._bits = bytearray(len(self._bits))
        self.count = 0

    def __len__(self):
        return self.count
