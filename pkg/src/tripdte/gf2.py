"""Bit vectors over F_2 and binary extension fields F_{2^l}.

Field elements are stored as plain Python ints whose bit i is the
coefficient of X^i.  `FieldCtx` does the arithmetic on raw ints (the
protocol layers use that directly); `GfElement` and `BitVec` are thin
immutable wrappers for callers that want type checking.
"""
from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass

import numpy as np

STAT_SECURITY = 40


class ContextMismatch(ValueError):
    """Operands live in different fields or have different lengths."""


class InsecureFieldWarning(UserWarning):
    pass


def clmul(a: int, b: int) -> int:
    """Carry-less product of two polynomials over F_2."""
    if a < b:
        a, b = b, a
    if b < 16:
        r = 0
        while b:
            if b & 1:
                r ^= a
            a <<= 1
            b >>= 1
        return r
    if b.bit_length() > 384:
        return _clmul_bytes(_window8(a), b)
    return _clmul_table(_window4(a), b)


def _window4(a: int) -> list[int]:
    t = [0] * 16
    t[1] = a
    for i in range(2, 16, 2):
        t[i] = t[i >> 1] << 1
        t[i + 1] = t[i] ^ a
    return t


def _window8(a: int) -> list[int]:
    t = [0] * 256
    t[1] = a
    for i in range(2, 256, 2):
        t[i] = t[i >> 1] << 1
        t[i + 1] = t[i] ^ a
    return t


def _clmul_bytes(t: list[int], b: int) -> int:
    r = 0
    for byte in b.to_bytes((b.bit_length() + 7) // 8, "big"):
        r = (r << 8) ^ t[byte]
    return r


def _clmul_table(t: list[int], b: int) -> int:
    # walk b from the top nibble down, Horner style
    r = 0
    shift = (b.bit_length() + 3) & ~3
    while shift:
        shift -= 4
        r = (r << 4) ^ t[(b >> shift) & 15]
    return r


_SPREAD = np.array([int("0".join(bin(i)[2:]), 2) for i in range(256)], dtype="<u2")


def spread_bits(x: int) -> int:
    """x(X) -> x(X^2), i.e. squaring over F_2."""
    if x < 256:
        return int(_SPREAD[x])
    raw = np.frombuffer(x.to_bytes((x.bit_length() + 7) // 8, "little"), np.uint8)
    return int.from_bytes(_SPREAD[raw].tobytes(), "little")


def poly_mod(a: int, f: int) -> int:
    """Remainder of a modulo f (schoolbook, any f)."""
    df = f.bit_length() - 1
    while a.bit_length() - 1 >= df:
        a ^= f << (a.bit_length() - 1 - df)
    return a


def poly_gcd(a: int, b: int) -> int:
    while b:
        a, b = b, poly_mod(a, b)
    return a


def _prime_factors(n: int) -> list[int]:
    out, p = [], 2
    while p * p <= n:
        if n % p == 0:
            out.append(p)
            while n % p == 0:
                n //= p
        p += 1
    if n > 1:
        out.append(n)
    return out


def is_irreducible(f: int) -> bool:
    """Rabin's test: X^(2^n) = X mod f and gcd(X^(2^(n/p)) - X, f) = 1."""
    n = f.bit_length() - 1
    if n < 1:
        return False
    if n == 1:
        return True
    if not f & 1:
        return False
    if _has_small_factor(f, n):
        return False
    red = _Reducer(f)
    checkpoints = {n // p for p in _prime_factors(n)}
    x = 2
    for i in range(1, n + 1):
        x = red.reduce(spread_bits(x))
        if i in checkpoints and poly_gcd(f, x ^ 2) != 1:
            return False
    return x == 2


def _has_small_factor(f: int, n: int) -> bool:
    # X^N + 1 with N = 2^d - 1 is the product of all irreducibles of degree
    # dividing d (bar X), and f mod X^N + 1 just folds exponents mod N.
    if bin(f).count("1") % 2 == 0:
        return n > 1
    exps = [i for i in range(f.bit_length()) if f >> i & 1]
    if len(exps) > 64:
        return False
    for d in range(2, min(9, n // 2 + 1)):
        big = (1 << d) - 1
        r = 0
        for e in exps:
            r ^= 1 << (e % big)
        if poly_gcd((1 << big) | 1, r) != 1:
            return True
    return False


@functools.lru_cache(maxsize=None)
def find_irreducible(ell: int) -> int:
    """Smallest irreducible of degree ell, trinomials first, then pentanomials."""
    if ell < 2:
        raise ValueError("ell must be at least 2")
    top = 1 << ell
    # Swan: no irreducible trinomial has degree divisible by 8
    for a in range(1, ell if ell % 8 else 1):
        f = top | (1 << a) | 1
        if is_irreducible(f):
            return f
    # pentanomials X^l + X^a + X^b + X^c + 1; (a, b, c) lexicographic is integer order
    for a in range(3, ell):
        for b in range(2, a):
            for c in range(1, b):
                f = top | (1 << a) | (1 << b) | (1 << c) | 1
                if is_irreducible(f):
                    return f
    for low in range(1, top, 2):
        if is_irreducible(top | low):
            return top | low
    raise AssertionError("unreachable: irreducibles exist in every degree")


class _Reducer:
    """Reduction modulo f, folding the high part through the low terms."""

    def __init__(self, f: int):
        self.f = f
        self.ell = f.bit_length() - 1
        self.mask = (1 << self.ell) - 1
        low = f ^ (1 << self.ell)
        self.low = low
        self.exps = [i for i in range(low.bit_length()) if low >> i & 1]
        self.sparse = len(self.exps) <= 5

    def reduce(self, p: int) -> int:
        ell, mask = self.ell, self.mask
        if self.sparse:
            exps = self.exps
            while True:
                h = p >> ell
                if not h:
                    return p
                p &= mask
                for e in exps:
                    p ^= h << e
        return poly_mod(p, self.f)


@dataclass(frozen=True)
class FieldCtx:
    ell: int
    modulus: int

    def __post_init__(self):
        if self.modulus.bit_length() - 1 != self.ell:
            raise ValueError("modulus degree does not match ell")
        if not is_irreducible(self.modulus):
            raise ValueError("modulus is reducible")
        if self.ell < STAT_SECURITY:
            warnings.warn(
                f"F_2^{self.ell} is below the {STAT_SECURITY}-bit statistical target; "
                "MAC checks over it are only meaningful as a soundness experiment",
                InsecureFieldWarning,
                stacklevel=3,
            )
        object.__setattr__(self, "_red", _Reducer(self.modulus))

    @property
    def mask(self) -> int:
        return (1 << self.ell) - 1

    def reduce(self, p: int) -> int:
        return self._red.reduce(p)

    def mul(self, a: int, b: int) -> int:
        return self._red.reduce(clmul(a, b))

    def scaler(self, a: int):
        """Return x -> a*x with a's window table precomputed."""
        if a == 0:
            return lambda x: 0
        red = self._red.reduce
        if self.ell > 256:
            t8 = _window8(a)

            def times(x: int) -> int:
                return red(_clmul_bytes(t8, x)) if x else 0
        else:
            t = _window4(a)

            def times(x: int) -> int:
                return red(_clmul_table(t, x)) if x else 0

        return times

    def pow(self, a: int, e: int) -> int:
        r = 1
        while e:
            if e & 1:
                r = self.mul(r, a)
            a = self.reduce(spread_bits(a))
            e >>= 1
        return r

    def element(self, v: int) -> "GfElement":
        return GfElement(v, self)


@functools.lru_cache(maxsize=None)
def field(ell: int) -> FieldCtx:
    """The canonical field of width ell (deterministic modulus)."""
    return FieldCtx(ell, find_irreducible(ell))


@dataclass(frozen=True)
class BitVec:
    bits: int
    length: int

    def __post_init__(self):
        if self.bits < 0 or self.bits >> self.length:
            raise ValueError("bits exceed length")

    def __xor__(self, other: "BitVec") -> "BitVec":
        if other.length != self.length:
            raise ContextMismatch("length mismatch")
        return BitVec(self.bits ^ other.bits, self.length)

    __add__ = __xor__
    __sub__ = __xor__

    def __len__(self) -> int:
        return self.length

    def __getitem__(self, i: int) -> int:
        if not 0 <= i < self.length:
            raise IndexError(i)
        return self.bits >> i & 1

    def as_field(self, ctx: FieldCtx) -> "GfElement":
        if ctx.ell != self.length:
            raise ContextMismatch("field width differs from vector length")
        return GfElement(self.bits, ctx)


@dataclass(frozen=True)
class GfElement:
    coeffs: int
    ctx: FieldCtx

    def __post_init__(self):
        if self.coeffs < 0 or self.coeffs >> self.ctx.ell:
            raise ValueError("degree too large for field")

    def _check(self, other: "GfElement"):
        if not isinstance(other, GfElement) or other.ctx != self.ctx:
            raise ContextMismatch("operands are in different fields")

    def __add__(self, other: "GfElement") -> "GfElement":
        self._check(other)
        return GfElement(self.coeffs ^ other.coeffs, self.ctx)

    __sub__ = __add__
    __xor__ = __add__

    def __mul__(self, other: "GfElement") -> "GfElement":
        return gf_mul(self, other)

    def as_bits(self) -> BitVec:
        return BitVec(self.coeffs, self.ctx.ell)


def gf_mul(a: GfElement, b: GfElement) -> GfElement:
    a._check(b)
    return GfElement(a.ctx.mul(a.coeffs, b.coeffs), a.ctx)
