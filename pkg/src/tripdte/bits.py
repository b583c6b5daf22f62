"""Packing helpers for bit-packed integers and fixed-width vectors."""
from __future__ import annotations

import numpy as np


def mask(width: int) -> int:
    return (1 << width) - 1


def nbytes(width: int) -> int:
    return (width + 7) // 8


def pack_words(vals, width: int) -> bytes:
    nb = nbytes(width)
    return b"".join(v.to_bytes(nb, "little") for v in vals)


def unpack_words(buf: bytes, width: int, count: int) -> list[int]:
    nb = nbytes(width)
    if len(buf) != nb * count:
        raise ValueError(f"expected {nb * count} bytes, got {len(buf)}")
    fb = int.from_bytes
    return [fb(buf[i:i + nb], "little") for i in range(0, nb * count, nb)]


def to_bits(x: int, n: int) -> np.ndarray:
    """Little-endian bit array of length n (uint8 0/1)."""
    raw = np.frombuffer(x.to_bytes(nbytes(n) or 1, "little"), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:n]


def from_bits(arr: np.ndarray) -> int:
    return int.from_bytes(np.packbits(np.asarray(arr, dtype=np.uint8), bitorder="little").tobytes(), "little")


def fan(y: int, count: int, group: int) -> int:
    """Repeat each of the low `count` bits of y `group` times."""
    if group == 1:
        return y
    if count == 1:
        return mask(group) if y & 1 else 0
    if y == 0:
        return 0
    return from_bits(np.repeat(to_bits(y, count), group))


def fold_xor(x: int, count: int, width: int) -> int:
    """XOR together the `count` consecutive width-bit chunks of x."""
    if count == 1:
        return x
    if count * width <= 4096:
        r, m = 0, mask(width)
        for _ in range(count):
            r ^= x & m
            x >>= width
        return r
    arr = to_bits(x, count * width).reshape(count, width)
    return from_bits(np.bitwise_xor.reduce(arr, axis=0))


def concat(vals, width: int) -> int:
    """Little-endian concatenation of width-bit words."""
    if len(vals) > 64:
        return int.from_bytes(pack_words(vals, width), "little") if width % 8 == 0 else _concat_slow(vals, width)
    return _concat_slow(vals, width)


def _concat_slow(vals, width: int) -> int:
    r = 0
    for v in reversed(vals):
        r = (r << width) | v
    return r


def split(x: int, width: int, count: int) -> list[int]:
    if width % 8 == 0:
        return unpack_words(x.to_bytes(nbytes(width * count), "little"), width, count)
    m = mask(width)
    out = []
    for _ in range(count):
        out.append(x & m)
        x >>= width
    return out
