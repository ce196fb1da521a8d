#!/usr/bin/env python3
"""
Analytic cost model

Closed-form communication, computation and storage costs for the 2-3 tree
protocol, plus formula-only columns for PCGR, GKD and GKSS. Bracketed costs
are returned as a Band so measured values can be checked for containment.

Author: bdstest
License: Apache 2.0
Copyright: 2025 CDSI - Compliance Data Systems Insights
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

# Configure logging
logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Band:
    """Closed interval [low, high]; low == high for exact formulas"""
    low: float
    high: float

    def __contains__(self, value: float) -> bool:
        return self.low <= value <= self.high

    def __add__(self, other: "Band") -> "Band":
        return Band(self.low + other.low, self.high + other.high)

    def shift(self, amount: float) -> "Band":
        return Band(self.low + amount, self.high + amount)

    def scale(self, factor: float) -> "Band":
        return Band(self.low * factor, self.high * factor)

    @property
    def exact(self) -> bool:
        return self.low == self.high

    def __str__(self) -> str:
        if self.exact:
            return _num(self.low)
        return f"[{_num(self.low)}, {_num(self.high)}]"


def _num(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else f"{value:.2f}"


def exact(value: float) -> Band:
    return Band(value, value)


def _span(h: int) -> Band:
    """[2^h, 3^h], the leaf-count spread of a 2-3 tree with h internal levels"""
    if h < 0:
        return exact(0)
    return Band(2 ** h, 3 ** h)


# ---------------------------------------------------------------------------
# Structure


def internal_nodes(h: int) -> Band:
    """n_1: internal nodes of a subgroup tree of height h, SN root excluded"""
    if h < 2:
        return exact(0)
    return Band(2 ** (h - 1) - 1, (3 ** (h - 1) - 1) // 2)


def hash_bound(h: int) -> Band:
    return Band(2 ** h - 1, (3 ** h - 1) // 2)


def max_code_length(m: int) -> int:
    """Longest MDS code over GF(2^m)"""
    return 2 ** m + 1


def balanced_height(members: int) -> int:
    """Levels of the shallowest 2-3 tree holding this many members"""
    if members <= 0:
        return 0
    if members == 1:
        return 2
    return 1 + max(1, math.ceil(math.log(members, 3) - 1e-9))


# ---------------------------------------------------------------------------
# Our protocol, per event


@dataclass(frozen=True)
class EventFormula:
    """Analytic cost of one event kind, numerically evaluated"""
    op: str
    multicasts: Band
    unicasts: Band
    sn_ops: Dict[str, Band]
    member_ops: Dict[str, Band]
    text: str


def init_cost(n: int, h: int) -> EventFormula:
    n1 = internal_nodes(h)
    return EventFormula(
        op='init',
        multicasts=_span(h - 2).scale(2),
        unicasts=exact(n),
        sn_ops={'C_E': exact(n), 'C_H': n1.shift(n), 'C_M': n1},
        member_ops={'C_H': exact(1), 'C_D': exact(2)},
        text="nU + [2^(h-2), 3^(h-2)]*2M",
    )


def join_cost(h: int) -> EventFormula:
    return EventFormula(
        op='join',
        multicasts=exact(h),
        unicasts=exact(1),
        sn_ops={'C_E': exact(1), 'C_M': exact(h - 1), 'C_H': Band(2 * (h - 1), 3 * (h - 1))},
        member_ops={'C_H': exact(1), 'C_D': exact(2)},
        text="hM + U",
    )


def leave_cost(h: int, bs_degree: int) -> EventFormula:
    """Rekey of the affected path, one GK relay, (deg - 1) GK unicasts from the BS"""
    multicasts = _span(h - 2).shift(bs_degree - 1 + 1)
    return EventFormula(
        op='leave',
        multicasts=multicasts,
        unicasts=exact(0),
        sn_ops={'C_M': exact(h - 1), 'C_H': Band(2 * (h - 1), 3 * (h - 1))},
        member_ops={'C_H': exact(1), 'C_D': exact(1)},
        text="[2^(h-2), 3^(h-2)]M + (deg-1)M + M",
    )


def merge_cost(x: int, h: int, h1: int) -> EventFormula:
    """x members with a subtree of height h1 merged into a tree of height h"""
    multicasts = _span(h1 - 2).shift(1 + max(0.0, h - h1 + 0.75))
    return EventFormula(
        op='merge',
        multicasts=multicasts,
        unicasts=exact(x),
        sn_ops={'C_E': exact(x), 'C_H': _span(h1 + 2)},
        member_ops={'C_H': exact(1), 'C_D': exact(2)},
        text="xU + M + [2^(h1-2), 3^(h1-2)]M + (h-h1+3/4)M",
    )


def partition_cost(n: int, h: int) -> EventFormula:
    """Bounded above by re-initializing the remaining subgroup"""
    bound = init_cost(n, h)
    return EventFormula(
        op='partition',
        multicasts=Band(0, bound.multicasts.high + h),
        unicasts=Band(0, n),
        sn_ops={op: Band(0, b.high) for op, b in bound.sn_ops.items()},
        member_ops={'C_H': Band(0, 1), 'C_D': Band(0, 2)},
        text="<= re-initialization",
    )


def table_communication(op: str, n: int, h: int) -> str:
    """Our protocol's communication column, in code-symbol units L"""
    if op == 'init':
        return f"2nL = {2 * n}L"
    if op == 'join':
        return f"[h+3, h+4]L = [{h + 3}, {h + 4}]L"
    return f"[2^(h-2), 3^(h-2)]L = {_span(h - 2)}L"


# ---------------------------------------------------------------------------
# Storage


@dataclass(frozen=True)
class StorageFormula:
    """Storage in bits next to the symbolic unit count"""
    bits: Band
    units: str


def symbol_bits(code_length: int) -> int:
    """l: bits needed to address one code position"""
    return max(1, math.ceil(math.log2(code_length + 1)))


def sn_storage(n: int, h: int, code_length: int, nonce_bits: int) -> StorageFormula:
    l = symbol_bits(code_length)
    n1 = internal_nodes(h)
    return StorageFormula(n1.scale(nonce_bits).shift(n * (2 * l + 1)), "n(2l+1) + n1*l_r bits")


def member_storage(h: int, code_length: int, nonce_bits: int) -> StorageFormula:
    l = symbol_bits(code_length)
    return StorageFormula(exact((2 * l + 1) + (h - 1) * nonce_bits), "(2l+1) + (h-1)*l_r bits")


# ---------------------------------------------------------------------------
# Comparison columns


@dataclass(frozen=True)
class ComparisonEntry:
    protocol: str
    op: str
    column: str
    formula: str
    evaluate: Optional[Callable[[Dict[str, float]], float]] = None

    def value(self, params: Optional[Dict[str, float]]) -> Optional[float]:
        if not params or self.evaluate is None:
            return None
        try:
            return float(self.evaluate(params))
        except KeyError:
            return None


def _e(protocol: str, op: str, column: str, formula: str,
       fn: Optional[Callable[[Dict[str, float]], float]] = None) -> ComparisonEntry:
    return ComparisonEntry(protocol, op, column, formula, fn)


# O(...) terms are evaluated on their inner expression; C_E counts as one unit
COMPARISON: List[ComparisonEntry] = [
    _e('PCGR', 'init', 'storage', "(n+1)(t+1)L", lambda p: (p['n'] + 1) * (p['t'] + 1) * p['L']),
    _e('PCGR', 'init', 'computation', "O((n+1)t^2)+nC_E", lambda p: (p['n'] + 1) * p['t'] ** 2 + p['n']),
    _e('PCGR', 'init', 'communication', "n(t+1)L", lambda p: p['n'] * (p['t'] + 1) * p['L']),
    _e('PCGR', 'join', 'storage', "(n+1)(t+1)L", lambda p: (p['n'] + 1) * (p['t'] + 1) * p['L']),
    _e('PCGR', 'join', 'computation', "O(mu^3)+nC_E", lambda p: p['mu'] ** 3 + p['n']),
    _e('PCGR', 'join', 'communication', "nL", lambda p: p['n'] * p['L']),
    _e('PCGR', 'leave', 'storage', "(n+1)(t+1)L", lambda p: (p['n'] + 1) * (p['t'] + 1) * p['L']),
    _e('PCGR', 'leave', 'computation', "O(mu^3)+nC_E", lambda p: p['mu'] ** 3 + p['n']),
    _e('PCGR', 'leave', 'communication', "nL", lambda p: p['n'] * p['L']),
    _e('GKD', 'init', 'storage', "(2t+3+w)L", lambda p: (2 * p['t'] + 3 + p['w']) * p['L']),
    _e('GKD', 'init', 'computation', "O(2t^2)", lambda p: 2 * p['t'] ** 2),
    _e('GKD', 'init', 'communication', "5/2(t+1)n_B*L", lambda p: 2.5 * (p['t'] + 1) * p['n_B'] * p['L']),
    _e('GKD', 'join', 'storage', "(m+1)L", lambda p: (p['m'] + 1) * p['L']),
    _e('GKD', 'join', 'computation', "O(t^3)+nC_E", lambda p: p['t'] ** 3 + p['n']),
    _e('GKD', 'join', 'communication', "(t+1)L", lambda p: (p['t'] + 1) * p['L']),
    _e('GKD', 'leave', 'storage', "(m+1)L", lambda p: (p['m'] + 1) * p['L']),
    _e('GKD', 'leave', 'computation', "O(t^3)+nC_E", lambda p: p['t'] ** 3 + p['n']),
    _e('GKD', 'leave', 'communication', "(t+1)L", lambda p: (p['t'] + 1) * p['L']),
    _e('GKSS', 'init', 'sn storage', "(2n+3)L", lambda p: (2 * p['n'] + 3) * p['L']),
    _e('GKSS', 'init', 'node storage', "4L", lambda p: 4 * p['L']),
    _e('GKSS', 'init', 'sn computation', "nC_E", lambda p: p['n']),
    _e('GKSS', 'init', 'node computation', "C_D", lambda p: 1),
    _e('GKSS', 'init', 'communication', "(n+m)L", lambda p: (p['n'] + p['m']) * p['L']),
    _e('GKSS', 'join', 'sn storage', "(2n+3)L", lambda p: (2 * p['n'] + 3) * p['L']),
    _e('GKSS', 'join', 'node storage', "4L", lambda p: 4 * p['L']),
    _e('GKSS', 'join', 'sn computation', "O(2^2)+nC_E", lambda p: 4 + p['n']),
    _e('GKSS', 'join', 'node computation', "O(1)+C_D", lambda p: 2),
    _e('GKSS', 'join', 'communication', "4(n+h)n", lambda p: 4 * (p['n'] + p['h']) * p['n']),
    _e('GKSS', 'leave', 'sn storage', "(2n+3)L", lambda p: (2 * p['n'] + 3) * p['L']),
    _e('GKSS', 'leave', 'node storage', "4L", lambda p: 4 * p['L']),
    _e('GKSS', 'leave', 'sn computation', "O(2^2)+nC_E", lambda p: 4 + p['n']),
    _e('GKSS', 'leave', 'node computation', "O(1)+C_D", lambda p: 2),
    _e('GKSS', 'leave', 'communication', "2L+4(n+h)n", lambda p: 2 * p['L'] + 4 * (p['n'] + p['h']) * p['n']),
]


def comparison_rows(op: Optional[str] = None,
                    params: Optional[Dict[str, float]] = None) -> List[Dict[str, object]]:
    """Formula strings (and values when every symbol is supplied) per protocol"""
    rows = []
    for entry in COMPARISON:
        if op is not None and entry.op != op:
            continue
        value = entry.value(params)
        rows.append({
            'protocol': entry.protocol, 'op': entry.op, 'column': entry.column,
            'formula': entry.formula, 'value': _num(value) if value is not None else '',
        })
    return rows


def parse_params(text: Optional[str]) -> Dict[str, float]:
    """'t=4,w=2,mu=3' -> {'t': 4.0, 'w': 2.0, 'mu': 3.0}"""
    params: Dict[str, float] = {}
    if not text:
        return params
    for item in text.split(','):
        name, sep, raw = item.partition('=')
        if not sep:
            raise ValueError(f"expected name=value, got '{item}'")
        params[name.strip()] = float(raw)
    return params


def formula_for(op: str, **kwargs: int) -> Tuple[EventFormula, str]:
    """Dispatch by event kind; returns the formula and its table text"""
    if op == 'init':
        formula = init_cost(kwargs['n'], kwargs['h'])
    elif op == 'join':
        formula = join_cost(kwargs['h'])
    elif op == 'leave':
        formula = leave_cost(kwargs['h'], kwargs['bs_degree'])
    elif op == 'merge':
        formula = merge_cost(kwargs['x'], kwargs['h'], kwargs['h1'])
    elif op == 'partition':
        formula = partition_cost(kwargs['n'], kwargs['h'])
    else:
        raise ValueError(f"unknown event kind '{op}'")
    return formula, formula.text
