#!/usr/bin/env python3
"""
Controller and member state machines

The BS (GroupController) owns the group key GK and the top layer; every SN
(SubgroupController) owns one weight-balanced key tree, the secrets of its
leaves and the keys of its internal nodes. Membership events produce an
ordered list of Transmissions that the harness delivers to members, who
update their keyrings through member_process.

Author: bdstest
License: Apache 2.0
Copyright: 2025 CDSI - Compliance Data Systems Insights
"""

import logging
import random
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

try:
    from .exceptions import ConfigError, MembershipError, OutOfRange
    from .keytree import (KeyNode, KeyTree, NodeKind, build_balanced_tree, insert_leaf,
                          merge_trees, partition_leaves, remove_leaf, swap_roots)
    from .rekey import (RekeyBroadcast, RekeyCodec, SealedKeyMsg, SeedAssignment, SeedKey,
                        SessionKey, WireMessage, logic_seed)
except ImportError:
    import sys
    from pathlib import Path
    sys.path.append(str(Path(__file__).parent))
    from exceptions import ConfigError, MembershipError, OutOfRange
    from keytree import (KeyNode, KeyTree, NodeKind, build_balanced_tree, insert_leaf,
                         merge_trees, partition_leaves, remove_leaf, swap_roots)
    from rekey import (RekeyBroadcast, RekeyCodec, SealedKeyMsg, SeedAssignment, SeedKey,
                       SessionKey, WireMessage, logic_seed)

# Configure logging
logger = logging.getLogger(__name__)

BS_ID = "BS"

Snapshot = Dict[str, Tuple[str, ...]]


@dataclass(frozen=True)
class Transmission:
    """One message on the wire with its audience"""
    event: str
    message: WireMessage
    recipients: Tuple[str, ...]
    origin: str
    cast: str = 'M'  # M = multicast, U = unicast

    @property
    def kind(self) -> str:
        if isinstance(self.message, RekeyBroadcast):
            return 'broadcast'
        if isinstance(self.message, SealedKeyMsg):
            return 'sealed'
        return 'seed'


def _members_under(node: KeyNode) -> Tuple[str, ...]:
    return tuple(n.id for n in node.preorder() if n.kind == NodeKind.MEMBER)


def _snapshot(tree: KeyTree) -> Snapshot:
    return {n.id: tuple(c.id for c in n.children) for n in tree.internal_nodes()}


class SubgroupController:
    """SN: key tree, seed table and node keys of one subgroup"""

    def __init__(self, sn_id: str, index: int, codec: RekeyCodec, point_limit: int,
                 rng: random.Random):
        self.sn_id = sn_id
        self.index = index
        self.codec = codec
        self.rng = rng
        self.tree = KeyTree(sn_id, point_limit)
        self.tree.root.position = index
        self.seeds: Dict[str, bytes] = {}
        self.generations: Dict[str, int] = {}
        self._generation = 0
        self.keys: Dict[str, SessionKey] = {}
        self.epoch = 0
        self.issued: List[Tuple[str, SessionKey]] = []
        self.group: Optional["GroupController"] = None

    # -- state ------------------------------------------------------------

    @property
    def members(self) -> List[str]:
        return self.tree.member_ids()

    @property
    def is_empty(self) -> bool:
        return self.tree.is_empty

    def root_key(self) -> Optional[SessionKey]:
        return self.keys.get(self.sn_id)

    def root_seed(self) -> bytes:
        return self.seeds[self.sn_id]

    def seed_key(self, member: str) -> SeedKey:
        return SeedKey(self.tree.leaves[member].position, self.seeds[member], self.generations[member])

    def storage(self) -> int:
        """Secrets held by the SN: leaf and logic seeds plus node keys"""
        return len(self.seeds) + len(self.keys)

    def expected_keyring(self, member: str) -> List[str]:
        return self.tree.path_ids(member) + [BS_ID]

    def _next_epoch(self) -> int:
        self.epoch += 1
        return self.epoch

    def _new_secret(self) -> bytes:
        raw = self.rng.getrandbits(8 * self.codec.secret_bytes).to_bytes(self.codec.secret_bytes, 'big')
        return self.codec.mask_secret(raw)

    # -- seeds ------------------------------------------------------------

    def _sync_seeds(self, event: str) -> List[Transmission]:
        """Fresh secrets for new leaves (unicast to members), drop dead entries"""
        out = []
        live = set(self.tree.nodes)
        for node_id in [n for n in self.seeds if n not in live]:
            del self.seeds[node_id]
            self.generations.pop(node_id, None)
        for node_id in [n for n in self.keys if n not in live]:
            del self.keys[node_id]
        for node in self.tree.root.preorder():
            if not node.is_leaf or node.id in self.seeds:
                continue
            self.seeds[node.id] = self._new_secret()
            self._generation += 1
            self.generations[node.id] = self._generation
            if node.kind == NodeKind.MEMBER:
                assignment = SeedAssignment(node.id, self.sn_id, self.seed_key(node.id), self.epoch)
                out.append(Transmission(event, assignment, (node.id,), self.sn_id, 'U'))
        return out

    def _update_logic_seed(self, node: KeyNode) -> None:
        child_seeds = [self.seeds[c.id] for c in node.children]
        self.seeds[node.id] = child_seeds[0] if len(child_seeds) == 1 else logic_seed(child_seeds)

    # -- rekeying ---------------------------------------------------------

    def _dirty(self, before: Snapshot, reported: Iterable[str]) -> Set[str]:
        marked: Set[KeyNode] = set()
        flagged = set(reported)
        for node in self.tree.internal_nodes():
            children = tuple(c.id for c in node.children)
            if node.id in flagged or before.get(node.id) != children or node.id not in self.keys:
                marked.update(node.path_to_root())
        return {n.id for n in marked}

    def _lost_members(self, node: KeyNode, before: Snapshot, now: Sequence[str]) -> bool:
        """True when a current member sat under node before and has moved elsewhere"""
        present = set(now)
        stack = [node.id]
        while stack:
            current = stack.pop()
            children = before.get(current)
            if children is not None:
                stack.extend(children)
            elif current in self.tree.leaves and current not in present:
                return True
        return False

    def _refresh_ready(self, node: KeyNode, parent_id: str, before_parent: Mapping[str, str],
                       dirty: Set[str], fresh_sealed: Set[str]) -> bool:
        """Every member under node held parent_id's key and still has it on its path.

        A new leaf parent slotted in above leaves that hung from parent_id is
        fine: members put its key in front of their old path.
        """
        if node.is_leaf:
            return node.kind != NodeKind.MEMBER or before_parent.get(node.id) == parent_id
        if node.id in fresh_sealed:
            return False
        if before_parent.get(node.id) != parent_id:
            return node.is_leaf_parent and all(
                self._refresh_ready(c, parent_id, before_parent, dirty, fresh_sealed) for c in node.children)
        if node.id not in dirty:
            return True
        return all(self._refresh_ready(c, node.id, before_parent, dirty, fresh_sealed) for c in node.children)

    def rekey(self, dirty: Set[str], before: Snapshot, event: str,
              allow_refresh: bool) -> List[Transmission]:
        """Regenerate dirty node keys bottom-up and emit their distribution"""
        out: List[Transmission] = []
        if self.tree.is_empty:
            self.keys.pop(self.sn_id, None)
            self.seeds.pop(self.sn_id, None)
            logger.info(f"{self.sn_id}: subgroup empty, SN key retired")
            return out

        before_parent = {child: parent for parent, children in before.items() for child in children}
        fresh_sealed: Set[str] = set()
        for node in self.tree.root.postorder():
            if node.is_leaf or node.id not in dirty:
                continue
            self._update_logic_seed(node)
            epoch = self._next_epoch()
            r = self.codec.nonce_for(epoch, self.sn_id)
            audience = _members_under(node)

            refreshable = (allow_refresh and not node.is_leaf_parent and node.id in self.keys
                           and node.id in before and not self._lost_members(node, before, audience))
            if refreshable:
                key = self.codec.refresh_key(self.keys[node.id], r, node.id, epoch)
                changed = [c for c in node.children if c.id in dirty] or node.children[:1]
                sealing = [c for c in changed
                           if not self._refresh_ready(c, node.id, before_parent, dirty, fresh_sealed)]
                # one sealed copy always goes out; it carries the refresh nonce
                for child in sealing or changed[:1]:
                    sealed = self.codec.seal_key(self.keys[child.id], key, child.id, node.id, refresh_nonce=r)
                    out.append(Transmission(event, sealed, audience, self.sn_id))
            else:
                participants = [(c.position, self.seeds[c.id]) for c in node.children]
                generations = [self.generations[c.id] for c in node.children] if node.is_leaf_parent else []
                key, broadcast = self.codec.sn_generate_key(participants, r, node.id, epoch, generations)
                if node.is_leaf_parent:
                    out.append(Transmission(event, broadcast, audience, self.sn_id))
                else:
                    fresh_sealed.add(node.id)
                    for child in node.children:
                        sealed = self.codec.seal_key(self.keys[child.id], key, child.id, node.id)
                        out.append(Transmission(event, sealed, _members_under(child), self.sn_id))
            self.keys[node.id] = key
            self.issued.append((node.id, key))
        self.codec.retire_nonces(self.epoch)
        return out

    def relay_group_key(self, gk: SessionKey, event: str) -> Optional[Transmission]:
        """E_{K_SN}(GK') to the whole subgroup"""
        root_key = self.root_key()
        if root_key is None:
            return None
        sealed = self.codec.seal_key(root_key, gk, self.sn_id, BS_ID)
        return Transmission(event, sealed, tuple(self.members), self.sn_id)


class GroupController:
    """BS: GK over the SN seeds and the top-level fan-out"""

    def __init__(self, codec: RekeyCodec, bs_id: str = BS_ID):
        self.bs_id = bs_id
        self.codec = codec
        self.subgroups: Dict[str, SubgroupController] = {}
        self.gk: Optional[SessionKey] = None
        self.epoch = 0
        self.issued: List[Tuple[str, SessionKey]] = []

    def add_subgroup(self, sub: SubgroupController) -> None:
        sub.group = self
        self.subgroups[sub.sn_id] = sub

    @property
    def members(self) -> List[str]:
        return [m for sub in self.subgroups.values() for m in sub.members]

    def locate(self, member: str) -> Optional[SubgroupController]:
        for sub in self.subgroups.values():
            if member in sub.tree.leaves:
                return sub
        return None

    def live_subgroups(self) -> List[SubgroupController]:
        return [s for s in self.subgroups.values() if not s.is_empty]

    @property
    def degree(self) -> int:
        return len(self.live_subgroups())

    def regenerate(self, event: str) -> Optional[SessionKey]:
        live = self.live_subgroups()
        if not live:
            self.gk = None
            logger.info("no members left, group key retired")
            return None
        self.epoch += 1
        r = self.codec.nonce_for(self.epoch, self.bs_id)
        participants = [(s.index, s.root_seed()) for s in live]
        gk, _ = self.codec.sn_generate_key(participants, r, self.bs_id, self.epoch)
        self.gk = gk
        self.issued.append((self.bs_id, gk))
        self.codec.retire_nonces(self.epoch)
        return gk

    def refresh_after(self, affected: SubgroupController, event: str, joining: bool) -> List[Transmission]:
        """GK' after a subgroup-local event.

        Joins and merges roll the old GK forward for everybody else; leaves
        and partitions reach the other subgroups under their SN keys.
        """
        old = self.gk
        gk = self.regenerate(event)
        if gk is None:
            return []
        out = []
        relay = affected.relay_group_key(gk, event)
        if relay is not None:
            out.append(relay)
        others = [s for s in self.live_subgroups() if s is not affected]
        if joining and old is not None:
            audience = tuple(m for s in others for m in s.members)
            if audience:
                sealed = self.codec.seal_key(old, gk, self.bs_id, self.bs_id)
                out.append(Transmission(event, sealed, audience, self.bs_id))
        else:
            for sub in others:
                sealed = self.codec.seal_key(sub.root_key(), gk, sub.sn_id, self.bs_id)
                out.append(Transmission(event, sealed, tuple(sub.members), self.bs_id))
        return out


# ---------------------------------------------------------------------------
# Member side


@dataclass
class MemberState:
    """Seed key plus the keys on the path from the leaf parent to GK"""
    member: str
    subgroup: str
    codec: RekeyCodec = field(repr=False)
    seed: Optional[SeedKey] = None
    path: List[str] = field(default_factory=list)
    keys: Dict[str, SessionKey] = field(default_factory=dict)

    @property
    def keyring(self) -> List[SessionKey]:
        return [self.keys[n] for n in self.path if n in self.keys]

    @property
    def group_key(self) -> Optional[SessionKey]:
        return self.keys.get(BS_ID) if self.path and self.path[-1] == BS_ID else None

    def storage(self) -> int:
        return len(self.path) + (1 if self.seed else 0)

    def _owns(self, node_id: str) -> bool:
        return node_id == self.subgroup or node_id.startswith(self.subgroup + '.')

    def _accept(self, node_id: str, key: SessionKey) -> None:
        self.keys[node_id] = key
        for stale in [n for n in self.keys if n not in self.path and n != node_id]:
            del self.keys[stale]


def member_process(ms: MemberState, msg: WireMessage) -> MemberState:
    """Apply one delivered message; anything not meant for this member is ignored"""
    if isinstance(msg, SeedAssignment):
        if msg.member == ms.member:
            ms.subgroup = msg.subgroup
            ms.seed = msg.seed
            ms.path = []
            ms.keys = {}
        return ms

    if isinstance(msg, RekeyBroadcast):
        if ms.seed is None or not ms._owns(msg.target_node) or ms.seed.j not in msg.points:
            return ms
        if msg.generations and msg.generations[msg.points.index(ms.seed.j)] != ms.seed.generation:
            return ms
        held = ms.keys.get(msg.target_node)
        if held is not None and held.epoch >= msg.epoch:
            return ms
        key = ms.codec.member_recover_key(ms.seed, msg)
        if not ms.path:
            ms.path = [msg.target_node]
        elif ms.path[0] != msg.target_node:
            # new leaf parent; sealed keys from above truncate whatever no longer applies
            ms.path = [msg.target_node] + ms.path
        ms._accept(msg.target_node, key)
        return ms

    if isinstance(msg, SealedKeyMsg):
        sealing, payload = msg.sealing_key_node, msg.payload_key_node
        current = ms.keys.get(payload)
        if current is not None and current.epoch >= msg.epoch:
            return ms
        holding = ms.keys.get(sealing)
        if holding is not None and sealing in ms.path and holding.epoch == msg.sealing_epoch:
            key = ms.codec.open_key(holding, msg)
            if sealing != payload:
                ms.path = ms.path[:ms.path.index(sealing) + 1] + [payload]
            ms._accept(payload, key)
        elif msg.refresh_nonce is not None and current is not None and payload in ms.path:
            key = ms.codec.refresh_key(current, msg.refresh_nonce, payload, msg.epoch)
            ms._accept(payload, key)
        return ms
    return ms


def apply_transmissions(members: Mapping[str, MemberState], trace: Sequence[Transmission],
                        codec: RekeyCodec) -> Dict[str, MemberState]:
    """Deliver a trace in order, creating state for newly seeded members"""
    states = dict(members)
    for tx in trace:
        for recipient in tx.recipients:
            state = states.get(recipient)
            if state is None:
                if not isinstance(tx.message, SeedAssignment):
                    continue
                state = MemberState(recipient, tx.message.subgroup, codec)
                states[recipient] = state
            member_process(state, tx.message)
    return states


# ---------------------------------------------------------------------------
# Initialization and membership events


def init_group(layout: Mapping[str, Sequence[str]], codec_factory, point_limit: int = 255,
               seed: int = 7, apply: bool = True) -> Tuple[GroupController, List[SubgroupController],
                                       Dict[str, MemberState], List[Transmission]]:
    """Build every subgroup tree, key it bottom-up and distribute GK.

    codec_factory(owner) returns a fresh RekeyCodec for that owner; all
    members share the codec built for "members".
    """
    if not layout:
        raise ConfigError("layout needs at least one SN")
    seen: Set[str] = set()
    for sn_id, members in layout.items():
        if not members:
            raise ConfigError(f"{sn_id} has no members")
        overlap = seen & set(members)
        if overlap:
            raise ConfigError(f"members in two subgroups: {sorted(overlap)}")
        seen.update(members)
    if len(layout) > point_limit:
        raise ConfigError(f"{len(layout)} subgroups need more than {point_limit} BS code positions")
    trees: Dict[str, KeyTree] = {}
    for sn_id, members in layout.items():
        try:
            trees[sn_id] = build_balanced_tree(list(members), sn_id, point_limit)
        except OutOfRange as e:
            raise ConfigError(f"{sn_id}: {len(members)} members need more than "
                              f"{point_limit} code positions") from e

    group = GroupController(codec_factory(BS_ID))
    event = "init"
    trace: List[Transmission] = []
    for index, sn_id in enumerate(layout, start=1):
        sub = SubgroupController(sn_id, index, codec_factory(sn_id), point_limit,
                                 random.Random(f"{seed}|{sn_id}"))
        sub.tree = trees[sn_id]
        sub.tree.root.position = index
        group.add_subgroup(sub)
        trace.extend(sub._sync_seeds(event))
        dirty = sub._dirty({}, [])
        trace.extend(sub.rekey(dirty, {}, event, allow_refresh=False))

    gk = group.regenerate(event)
    for sub in group.subgroups.values():
        sealed = group.codec.seal_key(sub.root_key(), gk, sub.sn_id, BS_ID)
        trace.append(Transmission(event, sealed, tuple(sub.members), BS_ID))

    member_codec = codec_factory("members")
    states = apply_transmissions({}, trace, member_codec) if apply else {}
    logger.info(f"group initialized: {len(group.subgroups)} subgroups, {len(group.members)} members")
    return group, list(group.subgroups.values()), states, trace


def _require_absent(sub: SubgroupController, members: Sequence[str]) -> None:
    if len(set(members)) != len(members):
        raise MembershipError("duplicate member ids")
    for member in members:
        holder = sub.group.locate(member) if sub.group else (sub if member in sub.tree.leaves else None)
        if holder is not None:
            raise MembershipError(f"{member} already belongs to {holder.sn_id}")


def _finish(sub: SubgroupController, before: Snapshot, reported: Iterable[str], event: str,
            joining: bool) -> List[Transmission]:
    trace = sub._sync_seeds(event)
    dirty = sub._dirty(before, reported) if not sub.is_empty else set()
    trace.extend(sub.rekey(dirty, before, event, allow_refresh=joining))
    if sub.group is not None:
        trace.extend(sub.group.refresh_after(sub, event, joining))
    return trace


def handle_join(sub: SubgroupController, member: str, event: str = "join") -> List[Transmission]:
    _require_absent(sub, [member])
    before = _snapshot(sub.tree)
    _, reported = insert_leaf(sub.tree, member)
    logger.info(f"{sub.sn_id}: {member} joined")
    return _finish(sub, before, reported, event, joining=True)


def handle_leave(sub: SubgroupController, member: str, event: str = "leave") -> List[Transmission]:
    if member not in sub.tree.leaves:
        raise MembershipError(f"{member} is not in {sub.sn_id}")
    before = _snapshot(sub.tree)
    _, reported = remove_leaf(sub.tree, member)
    logger.info(f"{sub.sn_id}: {member} left")
    return _finish(sub, before, reported, event, joining=False)


def handle_merge(sub: SubgroupController, members: Sequence[str], event: str = "merge") -> List[Transmission]:
    if not members:
        return []
    _require_absent(sub, list(members))
    before = _snapshot(sub.tree)
    if sub.tree.is_empty or len(members) == 1:
        reported: List[str] = []
        for member in members:
            _, dirty = insert_leaf(sub.tree, member)
            reported.extend(dirty)
    else:
        incoming = build_balanced_tree(list(members), like=sub.tree)
        if incoming.weight() > sub.tree.weight():
            # the heavier tree absorbs the lighter one and keeps the SN identity
            swap_roots(sub.tree, incoming)
            merged, reported = merge_trees(incoming, sub.tree)
        else:
            merged, reported = merge_trees(sub.tree, incoming)
        sub.tree = merged
        sub.tree.root.position = sub.index
    logger.info(f"{sub.sn_id}: merged {len(members)} members")
    return _finish(sub, before, reported, event, joining=True)


def handle_partition(sub: SubgroupController, leavers: Sequence[str],
                     event: str = "partition") -> List[Transmission]:
    before = _snapshot(sub.tree)
    _, reported = partition_leaves(sub.tree, list(leavers))
    logger.info(f"{sub.sn_id}: {len(leavers)} members partitioned away")
    return _finish(sub, before, reported, event, joining=False)
