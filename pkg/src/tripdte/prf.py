"""AES-based PRF and PRG.

F(k, nonce) is AES-128 in counter mode over blocks nonce(12 bytes) ||
counter(4 bytes, little endian).  We drive an ECB encryptor directly so
one cipher object serves every call with the same key.
"""
from __future__ import annotations

import hashlib

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes


def _ecb(key: bytes):
    return Cipher(algorithms.AES(key), modes.ECB()).encryptor()


def derive_key(*parts) -> bytes:
    h = hashlib.sha256()
    for part in parts:
        h.update(part if isinstance(part, bytes) else str(part).encode())
        h.update(b"\x00")
    return h.digest()[:16]


class Prf:
    def __init__(self, key: bytes):
        if len(key) != 16:
            raise ValueError("PRF key must be 16 bytes")
        self.key = key
        self._enc = _ecb(key)

    def stream(self, nonce: bytes, nbytes: int) -> bytes:
        nonce = nonce[:12].ljust(12, b"\x00")
        nblocks = (nbytes + 15) // 16
        if nblocks == 1:
            return self._enc.update(nonce + b"\x00\x00\x00\x00")[:nbytes]
        blocks = np.empty((nblocks, 16), dtype=np.uint8)
        blocks[:, :12] = np.frombuffer(nonce, dtype=np.uint8)
        blocks[:, 12:] = np.arange(nblocks, dtype="<u4").view(np.uint8).reshape(nblocks, 4)
        return self._enc.update(blocks.tobytes())[:nbytes]

    def bits(self, nonce: bytes, width: int) -> int:
        nb = (width + 7) // 8
        return int.from_bytes(self.stream(nonce, nb), "little") & ((1 << width) - 1)

    def words(self, nonce: bytes, width: int, count: int) -> list[int]:
        nb = (width + 7) // 8
        buf = self.stream(nonce, nb * count)
        mask = (1 << width) - 1
        fb = int.from_bytes
        return [fb(buf[i:i + nb], "little") & mask for i in range(0, nb * count, nb)]


class Prg:
    """Deterministic local randomness (AES-CTR keyed by a seed)."""

    def __init__(self, seed):
        if isinstance(seed, int):
            seed = seed.to_bytes(32, "little", signed=False) if seed >= 0 else str(seed).encode()
        self._prf = Prf(derive_key(b"prg", seed))
        self._ctr = 0

    def bytes(self, n: int) -> bytes:
        if n == 0:
            return b""
        nonce = self._ctr.to_bytes(12, "little")
        self._ctr += 1
        return self._prf.stream(nonce, n)

    def randbits(self, width: int) -> int:
        if width == 0:
            return 0
        return int.from_bytes(self.bytes((width + 7) // 8), "little") & ((1 << width) - 1)

    def randbelow(self, n: int) -> int:
        width = max(1, (n - 1).bit_length())
        while True:
            v = self.randbits(width)
            if v < n:
                return v

    def words(self, width: int, count: int) -> list[int]:
        nonce = self._ctr.to_bytes(12, "little")
        self._ctr += 1
        return self._prf.words(nonce, width, count)

    def numpy(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(int.from_bytes(self.bytes(16), "little")))
