#!/usr/bin/env python3
"""
GF(2^m) arithmetic and (L, n) MDS erasure coding

Field elements are plain ints in [0, 2^m - 1]. A message (m_1..m_n) is the
coefficient vector of a polynomial; the codeword symbol at position j is
c_j = sum_k m_k * j^(k-1). Any n symbols at distinct nonzero positions
recover the message (Vandermonde solve).

Author: bdstest
License: Apache 2.0
Copyright: 2025 CDSI - Compliance Data Systems Insights
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np

try:
    from .exceptions import DivisionByZero, OutOfRange, SingularSystem, ConfigError
except ImportError:
    import sys
    from pathlib import Path
    sys.path.append(str(Path(__file__).parent))
    from exceptions import DivisionByZero, OutOfRange, SingularSystem, ConfigError

# Configure logging
logger = logging.getLogger(__name__)

FieldElem = int

# Fixed reduction polynomials; other widths use the smallest irreducible one
FIELD_POLYNOMIALS = {
    4: 0x13,
    8: 0x11B,
    16: 0x1100B,
}

MIN_FIELD_BITS = 4
MAX_FIELD_BITS = 16


def _poly_degree(p: int) -> int:
    return p.bit_length() - 1


def _poly_mod(a: int, b: int) -> int:
    """Remainder of a divided by b over GF(2)[x]"""
    db = _poly_degree(b)
    while a and _poly_degree(a) >= db:
        a ^= b << (_poly_degree(a) - db)
    return a


def is_irreducible(poly: int) -> bool:
    """Exhaustive factor check; fine for degrees up to 16"""
    degree = _poly_degree(poly)
    if degree < 1:
        return False
    for divisor in range(2, 1 << (degree // 2 + 1)):
        if _poly_mod(poly, divisor) == 0:
            return False
    return True


@lru_cache(maxsize=None)
def default_polynomial(m: int) -> int:
    """Reduction polynomial used for GF(2^m)"""
    if m in FIELD_POLYNOMIALS:
        return FIELD_POLYNOMIALS[m]
    if not MIN_FIELD_BITS <= m <= MAX_FIELD_BITS:
        raise ConfigError(f"field width {m} not supported")
    for candidate in range((1 << m) | 1, 1 << (m + 1), 2):
        if is_irreducible(candidate):
            return candidate
    raise ConfigError(f"no irreducible polynomial of degree {m}")


@dataclass(frozen=True)
class FieldParams:
    """Field width, reduction polynomial and code length"""
    m: int
    reduction_poly: int
    L: int

    def __post_init__(self):
        if not MIN_FIELD_BITS <= self.m <= MAX_FIELD_BITS:
            raise ConfigError(f"field width {self.m} outside [{MIN_FIELD_BITS}, {MAX_FIELD_BITS}]")
        if _poly_degree(self.reduction_poly) != self.m or not is_irreducible(self.reduction_poly):
            raise ConfigError(f"0x{self.reduction_poly:X} is not irreducible of degree {self.m}")
        # Nonzero points only, so at most 2^m - 1 usable positions
        if not 1 <= self.L <= (1 << self.m) - 1:
            raise ConfigError(f"code length {self.L} outside [1, {(1 << self.m) - 1}]")

    @classmethod
    def for_width(cls, m: int, L: Optional[int] = None) -> "FieldParams":
        return cls(m=m, reduction_poly=default_polynomial(m), L=L or (1 << m) - 1)

    @property
    def order(self) -> int:
        return 1 << self.m

    @property
    def symbol_bytes(self) -> int:
        return (self.m + 7) // 8


@dataclass(frozen=True)
class Codeword:
    """Symbols of one codeword at known positions"""
    points: Tuple[int, ...]
    symbols: Tuple[FieldElem, ...]

    def __post_init__(self):
        if len(self.points) != len(self.symbols):
            raise SingularSystem("points and symbols differ in length")
        if len(set(self.points)) != len(self.points):
            raise SingularSystem(f"duplicate positions in {self.points}")


class GaloisField:
    """GF(2^m) with exp/log tables built once per parameter set"""

    def __init__(self, params: FieldParams):
        self.params = params
        self.m = params.m
        self.order = params.order
        self._build_tables()
        logger.debug(f"GF(2^{self.m}) ready, poly=0x{params.reduction_poly:X}, generator={self.generator}")

    def _schoolbook_mul(self, a: int, b: int) -> int:
        result = 0
        top = self.order
        poly = self.params.reduction_poly
        while b:
            if b & 1:
                result ^= a
            b >>= 1
            a <<= 1
            if a & top:
                a ^= poly
        return result

    def _build_tables(self) -> None:
        group_order = self.order - 1
        for candidate in range(2, self.order):
            exp = np.zeros(2 * group_order, dtype=np.int64)
            x = 1
            cycle = 0
            for i in range(group_order):
                exp[i] = x
                x = self._schoolbook_mul(x, candidate)
                if x == 1:
                    cycle = i + 1
                    break
            if cycle == group_order:
                break
        else:
            raise ConfigError(f"no generator found for GF(2^{self.m})")

        exp[group_order:] = exp[:group_order]
        log = np.full(self.order, -1, dtype=np.int64)
        log[exp[:group_order]] = np.arange(group_order, dtype=np.int64)

        self.generator = candidate
        # Python lists keep scalar lookups cheap inside the solver loops
        self._exp: List[int] = exp.tolist()
        self._log: List[int] = log.tolist()

    def validate(self, a: FieldElem) -> FieldElem:
        if not 0 <= a < self.order:
            raise OutOfRange(f"{a} is not an element of GF(2^{self.m})")
        return a

    @staticmethod
    def add(a: FieldElem, b: FieldElem) -> FieldElem:
        return a ^ b

    def mul(self, a: FieldElem, b: FieldElem) -> FieldElem:
        if a == 0 or b == 0:
            return 0
        return self._exp[self._log[a] + self._log[b]]

    def inv(self, a: FieldElem) -> FieldElem:
        if a == 0:
            raise DivisionByZero("zero has no inverse")
        return self._exp[(self.order - 1 - self._log[a]) % (self.order - 1)]

    def div(self, a: FieldElem, b: FieldElem) -> FieldElem:
        return self.mul(a, self.inv(b))

    def pow(self, a: FieldElem, k: int) -> FieldElem:
        if k == 0:
            return 1
        if a == 0:
            return 0
        return self._exp[(self._log[a] * k) % (self.order - 1)]

    def check_position(self, j: int) -> int:
        if not 1 <= j <= self.params.L:
            raise OutOfRange(f"position {j} outside [1, {self.params.L}]")
        return j

    def evaluate(self, message: Sequence[FieldElem], j: int) -> FieldElem:
        """Horner evaluation of sum_k m_k * j^(k-1)"""
        self.check_position(j)
        acc = 0
        for coefficient in reversed(message):
            acc = self.mul(acc, j) ^ coefficient
        return acc

    def encode(self, message: Sequence[FieldElem], points: Sequence[int]) -> Codeword:
        return Codeword(tuple(points), tuple(self.evaluate(message, j) for j in points))

    def _check_points(self, points: Sequence[int]) -> None:
        if not points:
            raise SingularSystem("at least one point is required")
        if any(j == 0 for j in points):
            raise SingularSystem("zero is not a valid evaluation point")
        if len(set(points)) != len(points):
            raise SingularSystem(f"duplicate evaluation points {list(points)}")
        for j in points:
            self.check_position(j)

    def solve(self, points: Sequence[int], values: Sequence[FieldElem]) -> List[FieldElem]:
        """Gaussian elimination on the Vandermonde system (reference path)"""
        self._check_points(points)
        n = len(points)
        if len(values) != n:
            raise SingularSystem(f"{n} points but {len(values)} values")
        rows = []
        for j, value in zip(points, values):
            self.validate(value)
            row = [1] * n
            for k in range(1, n):
                row[k] = self.mul(row[k - 1], j)
            row.append(value)
            rows.append(row)

        for col in range(n):
            pivot = next((r for r in range(col, n) if rows[r][col]), None)
            if pivot is None:
                raise SingularSystem("Vandermonde matrix is singular")
            rows[col], rows[pivot] = rows[pivot], rows[col]
            scale = self.inv(rows[col][col])
            rows[col] = [self.mul(x, scale) for x in rows[col]]
            for r in range(n):
                factor = rows[r][col]
                if r != col and factor:
                    rows[r] = [x ^ self.mul(factor, y) for x, y in zip(rows[r], rows[col])]
        return [rows[k][n] for k in range(n)]

    def interpolate(self, points: Sequence[int], values: Sequence[FieldElem]) -> List[FieldElem]:
        """Lagrange interpolation, kept as the independent oracle for solve()"""
        self._check_points(points)
        n = len(points)
        if len(values) != n:
            raise SingularSystem(f"{n} points but {len(values)} values")
        coefficients = [0] * n
        for i, (xi, yi) in enumerate(zip(points, values)):
            # basis polynomial prod_{k != i} (x - x_k), lowest degree first
            basis = [1]
            denominator = 1
            for k, xk in enumerate(points):
                if k == i:
                    continue
                shifted = [0] + basis
                for d, c in enumerate(basis):
                    shifted[d] ^= self.mul(c, xk)
                basis = shifted
                denominator = self.mul(denominator, xi ^ xk)
            scale = self.div(yi, denominator)
            for d, c in enumerate(basis):
                coefficients[d] ^= self.mul(c, scale)
        return coefficients

    def decode(self, codeword: Codeword) -> List[FieldElem]:
        """Erasure decode: message from the surviving symbols"""
        return self.solve(codeword.points, codeword.symbols)


@lru_cache(maxsize=None)
def get_field(m: int = 8, L: Optional[int] = None) -> GaloisField:
    """Shared field instance per (m, L)"""
    return GaloisField(FieldParams.for_width(m, L))


def _field(field: Optional[GaloisField]) -> GaloisField:
    return field if field is not None else get_field(8)


def gf_add(a: FieldElem, b: FieldElem, field: Optional[GaloisField] = None) -> FieldElem:
    f = _field(field)
    return f.add(f.validate(a), f.validate(b))


def gf_mul(a: FieldElem, b: FieldElem, field: Optional[GaloisField] = None) -> FieldElem:
    f = _field(field)
    return f.mul(f.validate(a), f.validate(b))


def gf_inv(a: FieldElem, field: Optional[GaloisField] = None) -> FieldElem:
    f = _field(field)
    return f.inv(f.validate(a))


def vandermonde_solve(points: Sequence[int], values: Sequence[FieldElem],
                      field: Optional[GaloisField] = None) -> List[FieldElem]:
    """Message (m_1..m_n) with sum_k m_k * j_i^(k-1) = values[i] for every i"""
    return _field(field).solve(points, values)


def codeword_symbol_at(message: Sequence[FieldElem], j: int,
                       field: Optional[GaloisField] = None) -> FieldElem:
    """c_j for the given message"""
    if j == 0:
        raise OutOfRange("position 0 is not a codeword position")
    return _field(field).evaluate(message, j)
