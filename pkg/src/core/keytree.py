#!/usr/bin/env python3
"""
Weight-balanced 2-3 key tree

Subtree weight: W(leaf) = 0, W(v) = deg(v) + max W(child). A tree is
balanced when every internal node has 2 or 3 children whose weights differ
by at most 1. The subgroup root is the one exception: it may hold a single
member leaf (weight passes through) or nothing at all.

Structural operations mutate the tree in place and return it together with
the ids of the nodes whose keys must be regenerated, bottom-up.

Author: bdstest
License: Apache 2.0
Copyright: 2025 CDSI - Compliance Data Systems Insights
"""

import heapq
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Sequence, Set, Tuple

try:
    from .exceptions import MembershipError, MergeAttachmentError, OutOfRange
except ImportError:
    import sys
    from pathlib import Path
    sys.path.append(str(Path(__file__).parent))
    from exceptions import MembershipError, MergeAttachmentError, OutOfRange

# Configure logging
logger = logging.getLogger(__name__)

Interval = Tuple[int, int]

MAX_MERGE_GAP = 3


class NodeKind(Enum):
    """Roles a node can play in the two-layer hierarchy"""
    ROOT = "root"
    SUBGROUP_ROOT = "subgroup-root"
    LOGIC = "logic"
    MEMBER = "member-leaf"
    PSEUDO = "pseudo-leaf"


@dataclass(eq=False)
class KeyNode:
    """Tree node; key material lives in the owning controller's seed table"""
    id: str
    kind: NodeKind
    children: List["KeyNode"] = field(default_factory=list)
    parent: Optional["KeyNode"] = field(default=None, repr=False)
    position: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.kind in (NodeKind.MEMBER, NodeKind.PSEUDO)

    @property
    def degree(self) -> int:
        return len(self.children)

    @property
    def is_leaf_parent(self) -> bool:
        return not self.is_leaf and all(c.is_leaf for c in self.children)

    def add_child(self, child: "KeyNode", index: Optional[int] = None) -> None:
        child.parent = self
        if index is None:
            self.children.append(child)
        else:
            self.children.insert(index, child)

    def remove_child(self, child: "KeyNode") -> int:
        index = self.children.index(child)
        del self.children[index]
        child.parent = None
        return index

    def replace_child(self, old: "KeyNode", new: "KeyNode") -> None:
        index = self.children.index(old)
        self.children[index] = new
        new.parent = self
        old.parent = None

    def preorder(self) -> Iterator["KeyNode"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def postorder(self) -> List["KeyNode"]:
        out: List[KeyNode] = []
        stack: List[Tuple[KeyNode, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                out.append(node)
                continue
            stack.append((node, True))
            for child in reversed(node.children):
                stack.append((child, False))
        return out

    def path_to_root(self) -> List["KeyNode"]:
        path = []
        node: Optional[KeyNode] = self
        while node is not None:
            path.append(node)
            node = node.parent
        return path


class PositionPool:
    """MDS evaluation points of one subgroup.

    Leaves take the lowest free point, logic nodes the highest, so the two
    populations stay apart the way the reserved logic range does.
    """

    def __init__(self, limit: int):
        self.limit = limit
        self._next_low = 1
        self._next_high = limit
        self._free_low: List[int] = []
        self._free_high: List[int] = []
        self._side: Dict[int, str] = {}

    @property
    def in_use(self) -> int:
        return len(self._side)

    def _exhausted(self) -> OutOfRange:
        return OutOfRange(f"point space of {self.limit} positions exhausted")

    def allocate_leaf(self) -> int:
        if self._free_low:
            point = heapq.heappop(self._free_low)
        elif self._next_low <= self._next_high:
            point = self._next_low
            self._next_low += 1
        else:
            raise self._exhausted()
        self._side[point] = 'low'
        return point

    def allocate_logic(self) -> int:
        if self._free_high:
            point = -heapq.heappop(self._free_high)
        elif self._next_high >= self._next_low:
            point = self._next_high
            self._next_high -= 1
        else:
            raise self._exhausted()
        self._side[point] = 'high'
        return point

    def release(self, point: int) -> None:
        side = self._side.pop(point, None)
        if side == 'low':
            heapq.heappush(self._free_low, point)
        elif side == 'high':
            heapq.heappush(self._free_high, -point)


class NodeFactory:
    """Id and position source shared by every tree of one subgroup"""

    def __init__(self, prefix: str, point_limit: int):
        self.prefix = prefix
        self.pool = PositionPool(point_limit)
        self._logic_serial = 0
        self._pseudo_serial = 0

    def logic(self) -> KeyNode:
        self._logic_serial += 1
        return KeyNode(f"{self.prefix}.T{self._logic_serial}", NodeKind.LOGIC,
                       position=self.pool.allocate_logic())

    def pseudo(self) -> KeyNode:
        self._pseudo_serial += 1
        return KeyNode(f"{self.prefix}.P{self._pseudo_serial}", NodeKind.PSEUDO,
                       position=self.pool.allocate_leaf())

    def member(self, member_id: str) -> KeyNode:
        return KeyNode(member_id, NodeKind.MEMBER, position=self.pool.allocate_leaf())


class KeyTree:
    """One subgroup's key tree rooted at its SN node"""

    def __init__(self, root_id: str = "SN", point_limit: int = 255,
                 factory: Optional[NodeFactory] = None, root: Optional[KeyNode] = None):
        self.factory = factory or NodeFactory(root_id, point_limit)
        self.root = root or KeyNode(root_id, NodeKind.SUBGROUP_ROOT)
        self.leaves: Dict[str, KeyNode] = {}
        self.nodes: Dict[str, KeyNode] = {self.root.id: self.root}
        self.last_merge_gap: Optional[int] = None
        self.last_insertion: Optional[str] = None

    # -- bookkeeping ------------------------------------------------------

    def spawn(self) -> "KeyTree":
        """Empty tree drawing ids and positions from the same subgroup"""
        return KeyTree(factory=self.factory, root=self.factory.logic())

    def _register(self, node: KeyNode) -> KeyNode:
        self.nodes[node.id] = node
        if node.kind == NodeKind.MEMBER:
            self.leaves[node.id] = node
        return node

    def _forget(self, node: KeyNode) -> None:
        self.nodes.pop(node.id, None)
        if node.kind == NodeKind.MEMBER:
            self.leaves.pop(node.id, None)
        if node.position and node.kind != NodeKind.SUBGROUP_ROOT:
            self.factory.pool.release(node.position)

    def new_logic(self) -> KeyNode:
        return self._register(self.factory.logic())

    def new_pseudo(self) -> KeyNode:
        return self._register(self.factory.pseudo())

    def new_member(self, member_id: str) -> KeyNode:
        return self._register(self.factory.member(member_id))

    # -- queries ------------------------------------------------------------

    @property
    def member_count(self) -> int:
        return len(self.leaves)

    @property
    def pseudo_count(self) -> int:
        return sum(1 for n in self.nodes.values() if n.kind == NodeKind.PSEUDO)

    @property
    def is_empty(self) -> bool:
        return not self.root.children

    def member_ids(self) -> List[str]:
        return [n.id for n in self.root.preorder() if n.kind == NodeKind.MEMBER]

    def internal_nodes(self) -> List[KeyNode]:
        return [n for n in self.root.preorder() if not n.is_leaf]

    def weight(self) -> int:
        return subtree_weight(self.root)

    def height(self) -> int:
        """Levels from the SN down to the deepest member leaf"""
        if not self.leaves:
            return 1
        return max(leaf_depth(leaf) for leaf in self.leaves.values()) + 1

    def path_ids(self, member_id: str) -> List[str]:
        """Key path of a member: leaf parent up to the subgroup root"""
        leaf = self.leaves[member_id]
        return [n.id for n in leaf.path_to_root()[1:]]


# ---------------------------------------------------------------------------
# Weights


def _combine(degree: int, child_weights: Sequence[int]) -> int:
    if degree == 0:
        return 0
    if degree == 1:
        return child_weights[0]
    return degree + max(child_weights)


def subtree_weight(v: KeyNode) -> int:
    """W(leaf) = 0, W(v) = deg(v) + max W(child); a single child passes through"""
    if v.is_leaf:
        return 0
    return _combine(v.degree, [subtree_weight(c) for c in v.children])


def compute_weights(root: KeyNode) -> Dict[KeyNode, int]:
    weights: Dict[KeyNode, int] = {}
    for node in root.postorder():
        if node.is_leaf:
            weights[node] = 0
        else:
            weights[node] = _combine(node.degree, [weights[c] for c in node.children])
    return weights


def ancestor_weight(v: KeyNode, top_degree: int = 0) -> int:
    """Sum of the degrees of v's ancestors (w_root = 0, w_i = w_p + deg(p)).

    top_degree adds the BS layer above a subgroup root.
    """
    total = 0
    node = v
    while node.parent is not None:
        total += node.parent.degree
        node = node.parent
    if node.kind == NodeKind.SUBGROUP_ROOT:
        total += top_degree
    return total


def leaf_depth(v: KeyNode) -> int:
    return len(v.path_to_root()) - 1


def _violations_at(node: KeyNode, weights: Dict[KeyNode, int], is_root: bool) -> List[str]:
    problems = []
    degree = node.degree
    if is_root:
        if degree > 3:
            problems.append(f"{node.id}: root degree {degree}")
        if degree == 1 and not node.children[0].is_leaf:
            problems.append(f"{node.id}: root has a single internal child")
        if degree == 1 and node.children[0].kind == NodeKind.PSEUDO:
            problems.append(f"{node.id}: root holds only a pseudo-leaf")
    elif degree not in (2, 3):
        problems.append(f"{node.id}: degree {degree}")
    if degree >= 2:
        child_weights = [weights[c] for c in node.children]
        if max(child_weights) - min(child_weights) > 1:
            problems.append(f"{node.id}: child weights {child_weights}")
    return problems


def check_balance(t: KeyTree) -> List[str]:
    """Empty iff every node is weight-balanced with degree 2 or 3"""
    weights = compute_weights(t.root)
    violations = []
    for node in t.root.preorder():
        if not node.is_leaf:
            violations.extend(_violations_at(node, weights, node is t.root))
    return violations


def check_index(t: KeyTree) -> List[str]:
    """Leaf index must match the member leaves reachable from the root"""
    reachable = {n.id for n in t.root.preorder() if n.kind == NodeKind.MEMBER}
    problems = []
    if reachable != set(t.leaves):
        problems.append(f"leaf index mismatch: {sorted(reachable ^ set(t.leaves))}")
    if t.pseudo_count > t.member_count:
        problems.append(f"{t.pseudo_count} pseudo-leaves for {t.member_count} members")
    return problems


# ---------------------------------------------------------------------------
# Feasible leaf counts per weight


def _merge_intervals(intervals: List[Interval]) -> List[Interval]:
    merged: List[Interval] = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1] + 1:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def _sumset(*sets: List[Interval]) -> List[Interval]:
    result: List[Interval] = [(0, 0)]
    for s in sets:
        result = _merge_intervals([(a + c, b + d) for a, b in result for c, d in s])
        if not result:
            return []
    return result


class _FeasibleCounts:
    """F[w]: leaf counts reachable by a balanced tree of weight exactly w"""

    def __init__(self):
        self._table: List[List[Interval]] = [[(1, 1)], []]

    def _extend(self) -> None:
        w = len(self._table)

        def at(x: int) -> List[Interval]:
            return self._table[x] if x >= 0 else []

        options: List[Interval] = []
        for pair in ((w - 2, w - 2), (w - 2, w - 3)):
            options.extend(_sumset(*(at(x) for x in pair)))
        for triple in ((w - 3, w - 3, w - 3), (w - 4, w - 3, w - 3), (w - 4, w - 4, w - 3)):
            options.extend(_sumset(*(at(x) for x in triple)))
        self._table.append(_merge_intervals(options))

    def at(self, w: int) -> List[Interval]:
        if w < 0:
            return []
        while len(self._table) <= w:
            self._extend()
        return self._table[w]

    def contains(self, w: int, k: int) -> bool:
        return any(lo <= k <= hi for lo, hi in self.at(w))

    def min_weight(self, k: int) -> int:
        w = 0
        while not self.contains(w, k):
            w += 1
        return w

    def weights_for(self, k: int, low: int, high: int) -> List[int]:
        return [w for w in range(max(low, 0), high + 1) if self.contains(w, k)]


FEASIBLE = _FeasibleCounts()


def _closest_split(first: List[Interval], second: List[Interval], total: int,
                   target: float) -> Optional[int]:
    """x in first with total - x in second, closest to target (smaller on ties)"""
    best: Optional[int] = None
    for a, b in first:
        for c, d in second:
            lo, hi = max(a, total - d), min(b, total - c)
            if lo > hi:
                continue
            x = min(max(int(target), lo), hi)
            for candidate in (x, min(x + 1, hi)):
                if best is None or (abs(candidate - target), candidate) < (abs(best - target), best):
                    best = candidate
    return best


def _shape(k: int, w: int) -> List[Tuple[int, int]]:
    """Children (leaf count, weight) for a node of weight w over k leaves.

    Higher degree first so fewer logic nodes are created; children ordered
    lightest first.
    """
    best: Optional[Tuple[int, List[Tuple[int, int]]]] = None
    for weights in ((w - 4, w - 3, w - 3), (w - 4, w - 4, w - 3), (w - 3, w - 3, w - 3)):
        if min(weights) < 0:
            continue
        for k1 in _candidates_near(FEASIBLE.at(weights[0]), k / 3.0, 1, k - 2):
            rest = k - k1
            k2 = _closest_split(FEASIBLE.at(weights[1]), FEASIBLE.at(weights[2]), rest, rest / 2.0)
            if k2 is None:
                continue
            parts = sorted([(k1, weights[0]), (k2, weights[1]), (rest - k2, weights[2])],
                           key=lambda p: (p[1], p[0]))
            spread = max(p[0] for p in parts) - min(p[0] for p in parts)
            if best is None or spread < best[0]:
                best = (spread, parts)
            break
    if best is not None:
        return best[1]
    for weights in ((w - 2, w - 2), (w - 3, w - 2)):
        if min(weights) < 0:
            continue
        k1 = _closest_split(FEASIBLE.at(weights[0]), FEASIBLE.at(weights[1]), k, k / 2.0)
        if k1 is not None:
            return sorted([(k1, weights[0]), (k - k1, weights[1])], key=lambda p: (p[1], p[0]))
    raise ValueError(f"no balanced shape with {k} leaves at weight {w}")


def _candidates_near(intervals: List[Interval], target: float, low: int, high: int) -> List[int]:
    values = []
    for a, b in intervals:
        a, b = max(a, low), min(b, high)
        if a <= b:
            values.extend(range(a, b + 1))
    return sorted(values, key=lambda x: (abs(x - target), x))


def _grow(t: KeyTree, node: KeyNode, leaves: List[KeyNode], w: int) -> None:
    """Attach a balanced structure of weight w over the given leaves to node"""
    k = len(leaves)
    offset = 0
    for count, child_weight in _shape(k, w):
        chunk = leaves[offset:offset + count]
        offset += count
        if count == 1:
            node.add_child(chunk[0])
        else:
            child = t.new_logic()
            node.add_child(child)
            _grow(t, child, chunk, child_weight)


def build_balanced_tree(members: Sequence[str], root_id: str = "SN", point_limit: int = 255,
                        like: Optional[KeyTree] = None) -> KeyTree:
    """Minimum-weight balanced tree over the members.

    With like=, the tree shares that subgroup's ids and positions and its
    root is an ordinary logic node (used for merges).
    """
    if not members:
        raise MembershipError("cannot build a tree without members")
    if len(set(members)) != len(members):
        raise MembershipError("duplicate member ids")
    t = like.spawn() if like is not None else KeyTree(root_id, point_limit)
    t._register(t.root)
    for member in members:
        if like is not None and member in like.leaves:
            raise MembershipError(f"{member} already in subgroup")
    leaves = [t.new_member(m) for m in members]
    if len(leaves) == 1:
        t.root.add_child(leaves[0])
    else:
        _grow(t, t.root, leaves, FEASIBLE.min_weight(len(leaves)))
    logger.debug(f"built tree over {len(members)} members, weight {t.weight()}")
    return t


# ---------------------------------------------------------------------------
# Change tracking


def _snapshot(t: KeyTree) -> Dict[str, Tuple[str, ...]]:
    return {n.id: tuple(c.id for c in n.children) for n in t.root.preorder() if not n.is_leaf}


def _dirty_since(t: KeyTree, before: Dict[str, Tuple[str, ...]]) -> List[str]:
    changed: Set[KeyNode] = set()
    for node in t.root.preorder():
        if node.is_leaf:
            continue
        if before.get(node.id) != tuple(c.id for c in node.children):
            changed.update(node.path_to_root())
    return [n.id for n in t.root.postorder() if n in changed]


# ---------------------------------------------------------------------------
# Repair machinery


def _drop_subtree(t: KeyTree, node: KeyNode) -> None:
    for n in node.postorder():
        t._forget(n)


def _splice(t: KeyTree, node: KeyNode, replacement: KeyNode) -> None:
    """Put replacement into node's slot and discard node"""
    if node.parent is None:
        raise ValueError("cannot splice the root")
    if replacement.parent is node:
        node.remove_child(replacement)
    node.parent.replace_child(node, replacement)
    node.children.clear()
    t._forget(node)


def _collapse_root(t: KeyTree) -> None:
    """Root over a single internal child adopts that child's children"""
    root = t.root
    while root.degree == 1 and not root.children[0].is_leaf:
        child = root.children[0]
        root.remove_child(child)
        for grandchild in list(child.children):
            child.remove_child(grandchild)
            root.add_child(grandchild)
        t._forget(child)


def _prune(t: KeyTree) -> None:
    """Remove empty or pseudo-only nodes and splice out degree-1 nodes"""
    for node in t.root.postorder():
        if node.is_leaf or node.parent is None and node is not t.root:
            continue
        if node is t.root:
            if node.children and all(c.kind == NodeKind.PSEUDO for c in node.children):
                for c in list(node.children):
                    node.remove_child(c)
                    t._forget(c)
            members = [c for c in node.children if c.kind == NodeKind.MEMBER]
            if members and len(members) == 1 and all(c.is_leaf for c in node.children):
                for c in [c for c in node.children if c.kind == NodeKind.PSEUDO]:
                    node.remove_child(c)
                    t._forget(c)
            _collapse_root(t)
            continue
        if all(c.kind == NodeKind.PSEUDO for c in node.children):
            parent = node.parent
            parent.remove_child(node)
            _drop_subtree(t, node)
        elif node.degree == 1:
            _splice(t, node, node.children[0])


def _rebuild(t: KeyTree, node: KeyNode, low: Optional[int] = None, high: Optional[int] = None) -> None:
    """Re-shape node's subtree over its member leaves, pseudo-leaves dropped"""
    members = [n for n in node.preorder() if n.kind == NodeKind.MEMBER]
    for child in list(node.children):
        node.remove_child(child)
        for n in child.postorder():
            if n.kind != NodeKind.MEMBER:
                t._forget(n)
    for leaf in members:
        leaf.parent = None
        leaf.children = []
    k = len(members)
    if k == 0:
        if node is not t.root:
            node.parent.remove_child(node)
            t._forget(node)
        return
    if k == 1:
        if node is t.root:
            node.add_child(members[0])
        else:
            node.add_child(members[0])
            _splice(t, node, members[0])
        return
    weight = FEASIBLE.min_weight(k)
    if low is not None and high is not None:
        fitting = FEASIBLE.weights_for(k, low, high)
        if fitting:
            weight = fitting[0]
    _grow(t, node, members, weight)


def _propagate(weights: Dict[KeyNode, int], node: KeyNode, new_weight: int) -> Optional[int]:
    """Root weight after node's weight changes, or None if an ancestor unbalances"""
    child, child_weight = node, new_weight
    current = node.parent
    while current is not None:
        ws = [child_weight if c is child else weights[c] for c in current.children]
        if len(ws) >= 2 and max(ws) - min(ws) > 1:
            return None
        child, child_weight = current, _combine(current.degree, ws)
        current = current.parent
    return child_weight


def _depth_first_violation(t: KeyTree) -> Optional[KeyNode]:
    weights = compute_weights(t.root)
    worst: Optional[Tuple[int, KeyNode]] = None
    for node in t.root.preorder():
        if node.is_leaf:
            continue
        if _violations_at(node, weights, node is t.root):
            depth = leaf_depth(node)
            if worst is None or depth > worst[0]:
                worst = (depth, node)
    return worst[1] if worst else None


def _repair(t: KeyTree, node: KeyNode) -> None:
    if node is not t.root and node.degree == 1:
        _splice(t, node, node.children[0])
        return
    if node is not t.root and node.degree == 0:
        node.parent.remove_child(node)
        t._forget(node)
        return
    if node is t.root and node.degree <= 1:
        _prune(t)
        return
    weights = compute_weights(t.root)
    child_weights = [weights[c] for c in node.children]
    if node.degree == 2 and max(child_weights) - min(child_weights) > MAX_MERGE_GAP:
        # large gap: fold the light child into the heavy one (merge rules)
        light, heavy = sorted(node.children, key=lambda c: weights[c])
        node.remove_child(light)
        if node is t.root:
            _collapse_root(t)
            region = t.root
        else:
            _splice(t, node, heavy)
            region = heavy
        _attach(t, light, region)
        return
    low = high = None
    if node.parent is not None:
        siblings = [weights[s] for s in node.parent.children if s is not node]
        if siblings:
            low, high = max(siblings) - 1, min(siblings) + 1
    _rebuild(t, node, low, high)


def _rebalance(t: KeyTree) -> None:
    guard = 4 * len(t.nodes) + 16
    while guard > 0:
        guard -= 1
        node = _depth_first_violation(t)
        if node is None:
            return
        _repair(t, node)
    logger.warning(f"{t.root.id}: local repairs did not converge, rebuilding whole tree")
    _rebuild(t, t.root)


# ---------------------------------------------------------------------------
# Join


@dataclass
class InsertionPlan:
    """Where and how a new leaf goes"""
    target: KeyNode
    action: str  # reuse | attach | push_down | split_up
    resulting_weight: int


def _leaf_parents(t: KeyTree) -> List[KeyNode]:
    return [n for n in t.root.preorder() if not n.is_leaf and n.is_leaf_parent]


def plan_insertion(t: KeyTree) -> Optional[InsertionPlan]:
    """Cheapest balanced way to add one leaf; None if every option unbalances"""
    for node in t.root.preorder():
        if node.kind == NodeKind.PSEUDO:
            return InsertionPlan(node.parent, 'reuse', t.weight())

    weights = compute_weights(t.root)
    best: Optional[Tuple[Tuple[int, int, int, int], InsertionPlan]] = None
    for index, p in enumerate(_leaf_parents(t)):
        options: List[Tuple[str, Optional[int]]] = []
        if p.degree <= 2:
            new_weight = {0: 0, 1: 2, 2: 3}[p.degree]
            options.append(('attach', _propagate(weights, p, new_weight)))
        else:
            options.append(('push_down', _propagate(weights, p, 4)))
            g = p.parent
            if g is not None and g.degree == 2:
                sibling_weights = [weights[c] for c in g.children if c is not p] + [2, 2]
                if max(sibling_weights) - min(sibling_weights) <= 1:
                    options.append(('split_up', _propagate(weights, g, 3 + max(sibling_weights))))
        for rank, (action, result) in enumerate(options):
            if result is None:
                continue
            key = (result, p.degree, index, rank)
            if best is None or key < best[0]:
                best = (key, InsertionPlan(p, action, result))
    return best[1] if best else None


def find_insertion_point(t: KeyTree) -> KeyNode:
    """Leaf parent where the next member goes (a pseudo-leaf's parent first)"""
    plan = plan_insertion(t)
    if plan is None:
        return t.root
    return plan.target


def insert_leaf(t: KeyTree, member: str, leaf: Optional[KeyNode] = None) -> Tuple[KeyTree, List[str]]:
    """Add one member leaf; an existing leaf node (from a merged tree) keeps its position"""
    if member in t.leaves:
        raise MembershipError(f"{member} is already a member")
    before = _snapshot(t)
    plan = plan_insertion(t)
    t.last_insertion = plan.action if plan is not None else "rebuild"
    if leaf is None:
        leaf = t.new_member(member)
    else:
        t._register(leaf)

    if plan is None:
        logger.warning(f"{t.root.id}: no balanced attachment for {member}, rebuilding")
        t.root.add_child(leaf)
        _rebuild(t, t.root)
    elif plan.action == 'reuse':
        pseudo = next(c for c in plan.target.children if c.kind == NodeKind.PSEUDO)
        plan.target.replace_child(pseudo, leaf)
        t._forget(pseudo)
    elif plan.action == 'attach':
        plan.target.add_child(leaf)
    elif plan.action == 'push_down':
        p = plan.target
        a, b, c = list(p.children)
        for child in (a, b, c):
            p.remove_child(child)
        left, right = t.new_logic(), t.new_logic()
        left.add_child(a)
        left.add_child(b)
        right.add_child(c)
        right.add_child(leaf)
        p.add_child(left)
        p.add_child(right)
    else:  # split_up
        p = plan.target
        c = p.children[-1]
        p.remove_child(c)
        q = t.new_logic()
        q.add_child(c)
        q.add_child(leaf)
        g = p.parent
        g.add_child(q, g.children.index(p) + 1)

    return t, _dirty_since(t, before)


# ---------------------------------------------------------------------------
# Leave and partition


def remove_leaf(t: KeyTree, member: str) -> Tuple[KeyTree, List[str]]:
    leaf = t.leaves.get(member)
    if leaf is None:
        raise MembershipError(f"{member} is not a member")
    before = _snapshot(t)
    p = leaf.parent
    siblings = [c for c in p.children if c is not leaf]

    if p is not t.root and p.degree == 2 and siblings[0].kind == NodeKind.MEMBER:
        # keep the slot: a pseudo-leaf takes the leaver's place
        p.replace_child(leaf, t.new_pseudo())
        t._forget(leaf)
    else:
        p.remove_child(leaf)
        t._forget(leaf)
        _prune(t)
        _rebalance(t)
    return t, _dirty_since(t, before)


def partition_leaves(t: KeyTree, members: Sequence[str]) -> Tuple[KeyTree, List[str]]:
    """Remove all listed members, then repair bottom-up"""
    unknown = [m for m in members if m not in t.leaves]
    if unknown:
        raise MembershipError(f"unknown members {unknown}")
    if len(set(members)) != len(members):
        raise MembershipError("duplicate members in partition")
    before = _snapshot(t)
    for member in members:
        leaf = t.leaves[member]
        leaf.parent.remove_child(leaf)
        t._forget(leaf)
    _prune(t)
    _rebalance(t)
    return t, _dirty_since(t, before)


# ---------------------------------------------------------------------------
# Merge


def _attach(t: KeyTree, sub: KeyNode, region: KeyNode) -> int:
    """Attach subtree sub somewhere inside region; returns the weight gap used"""
    weights = compute_weights(t.root)
    sub_weight = subtree_weight(sub)
    best: Optional[Tuple[Tuple[int, int, int], KeyNode, str, int]] = None
    for index, x in enumerate(region.preorder()):
        gap = abs(weights[x] - sub_weight)
        parent = x.parent
        if parent is not None and parent.degree == 2 and x is parent.children[-1]:
            ws = [weights[c] for c in parent.children] + [sub_weight]
            if max(ws) - min(ws) <= 1:
                result = _propagate(weights, parent, 3 + max(ws))
                if result is not None:
                    key = (result, gap, index)
                    if best is None or key < best[0]:
                        best = (key, x, 'sibling', gap)
        if gap <= 1 and not (x is t.root and x.degree <= 1):
            result = _propagate(weights, x, 2 + max(weights[x], sub_weight))
            if result is not None:
                key = (result, gap, index)
                if best is None or key < best[0]:
                    best = (key, x, 'pair', gap)

    if best is None:
        candidates = [(abs(weights[x] - sub_weight), i, x) for i, x in enumerate(region.preorder())
                      if not (x is t.root and x.degree <= 1)]
        if not candidates:
            t.root.add_child(sub)
            return 0
        gap, _, x = min(candidates, key=lambda c: (c[0], c[1]))
        if gap > MAX_MERGE_GAP:
            raise MergeAttachmentError(
                f"no node within weight {MAX_MERGE_GAP} of a weight-{sub_weight} subtree")
        action = 'pair'
    else:
        _, x, action, gap = best

    if action == 'sibling':
        x.parent.add_child(sub)
    elif x is t.root:
        pushed = t.new_logic()
        for child in list(x.children):
            x.remove_child(child)
            pushed.add_child(child)
        x.add_child(pushed)
        x.add_child(sub)
    else:
        y = t.new_logic()
        x.parent.replace_child(x, y)
        y.add_child(x)
        y.add_child(sub)
    return gap


def merge_trees(big: KeyTree, small: KeyTree) -> Tuple[KeyTree, List[str]]:
    """Attach small into big where the weights differ by at most 3"""
    if small.is_empty:
        return big, []
    overlap = set(big.leaves) & set(small.leaves)
    if overlap:
        raise MembershipError(f"members already present: {sorted(overlap)}")
    if small.member_count == 1 and small.root.degree == 1:
        leaf = small.root.children[0]
        small.root.remove_child(leaf)
        small.leaves.clear()
        small._forget(small.root)
        return insert_leaf(big, leaf.id, leaf)

    before = _snapshot(big)
    if big.is_empty:
        for child in list(small.root.children):
            small.root.remove_child(child)
            big.root.add_child(child)
        small._forget(small.root)
        big.nodes.update({k: v for k, v in small.nodes.items() if k != small.root.id})
        big.leaves.update(small.leaves)
        big.last_merge_gap = 0
        return big, _dirty_since(big, before)

    if subtree_weight(small.root) > subtree_weight(big.root):
        logger.debug("merge called with the lighter tree first")
    sub = small.root
    big.nodes.update(small.nodes)
    big.leaves.update(small.leaves)
    big.last_merge_gap = _attach(big, sub, big.root)
    _rebalance(big)
    return big, _dirty_since(big, before)


def swap_roots(a: KeyTree, b: KeyTree) -> None:
    """Exchange root identities so the heavier tree can carry the SN id"""
    ra, rb = a.root, b.root
    for tree, node in ((a, ra), (b, rb)):
        tree.nodes.pop(node.id, None)
    ra.id, rb.id = rb.id, ra.id
    ra.kind, rb.kind = rb.kind, ra.kind
    ra.position, rb.position = rb.position, ra.position
    a.nodes[ra.id] = ra
    b.nodes[rb.id] = rb


# ---------------------------------------------------------------------------
# Rendering


def render_tree(t: KeyTree, weights: bool = False) -> str:
    """Canonical nested text form, e.g. SN1(T1(u1,u2),T2(u3,u4,u5))"""
    table = compute_weights(t.root) if weights else {}

    def render(node: KeyNode) -> str:
        label = node.id + (f"[{table[node]}]" if weights else "")
        if node.is_leaf:
            return label
        return label + "(" + ",".join(render(c) for c in node.children) + ")"

    return render(t.root)
