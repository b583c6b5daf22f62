"""Slow, obviously-correct reference implementations."""


def clmul_ref(a: int, b: int) -> int:
    r = 0
    i = 0
    while b >> i:
        if b >> i & 1:
            r ^= a << i
        i += 1
    return r


def polymod_ref(a: int, f: int) -> int:
    df = f.bit_length() - 1
    while a.bit_length() - 1 >= df:
        a ^= f << (a.bit_length() - 1 - df)
    return a


def gf_mul_ref(a: int, b: int, f: int) -> int:
    return polymod_ref(clmul_ref(a, b), f)


def irreducible_ref(f: int) -> bool:
    """Trial division by every polynomial of degree 1..deg/2."""
    d = f.bit_length() - 1
    for g in range(2, 1 << (d // 2 + 1)):
        if polymod_ref(f, g) == 0 and g != f:
            return False
    return True


def point_fn(alpha: int, beta: int, m: int) -> list[int]:
    return [beta if x == alpha else 0 for x in range(m)]


def dte_ref(root, x) -> int:
    """Walk a logical tree to its leaf."""
    from tripdte.tree import Leaf
    nd = root
    while not isinstance(nd, Leaf):
        nd = nd.left if x[nd.feature] < nd.threshold else nd.right
    return nd.label
