#!/usr/bin/env python3
"""
Unit tests for the BS, SN and member state machines

Runs the sixteen-member walkthrough layout through init, a join into SN1,
a join into SN2 and that member's departure, checking keyrings, message
counts and who can read what.
"""

import pytest

# Import the module under test
import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', '..', 'src'))

from core.exceptions import ConfigError, MembershipError
from core.keytree import check_balance, render_tree
from core.rekey import RekeyBroadcast, SealedKeyMsg, logic_seed
from core.roles import (BS_ID, apply_transmissions, handle_join, handle_leave, handle_merge, handle_partition,
                        init_group, member_process)
from utils.config import GKMConfig

WALKTHROUGH_LAYOUT = {
    "SN1": [f"u{i}" for i in range(1, 9)],
    "SN2": ["u9", "u10", "u11"],
    "SN3": [f"u{i}" for i in range(12, 17)],
}


def multicasts(trace, origin=None):
    return [tx for tx in trace if tx.cast == 'M' and (origin is None or tx.origin == origin)]


def unicasts(trace):
    return [tx for tx in trace if tx.cast == 'U']


class TestInitialization:
    """Test suite for group initialization"""

    @pytest.fixture
    def config(self):
        return GKMConfig()

    @pytest.fixture
    def group(self, config):
        return init_group(WALKTHROUGH_LAYOUT, config.codec_for, config.point_limit, seed=7)

    def test_one_seed_unicast_per_member(self, group):
        """Test init sends exactly nU seed unicasts"""
        _, _, _, trace = group
        assert len(unicasts(trace)) == 16

    def test_multicast_count(self, group):
        """Test init multicasts: leaf-parent broadcasts, root seals and BS seals"""
        _, _, _, trace = group
        assert len(multicasts(trace, "SN1")) == 6
        assert len(multicasts(trace, "SN2")) == 1
        assert len(multicasts(trace, "SN3")) == 4
        assert len(multicasts(trace, BS_ID)) == 3

    def test_member_keyring(self, group):
        """Test u1 holds T1, SN1 and GK keys, in path order"""
        bs, subs, states, _ = group
        u1 = states["u1"]
        assert u1.path == ["SN1.T1", "SN1", BS_ID]
        assert u1.keys["SN1.T1"].expanded == subs[0].keys["SN1.T1"].expanded
        assert u1.group_key.expanded == bs.gk.expanded
        assert u1.storage() == 4

    def test_every_member_agrees(self, group):
        """Test every member's keyring matches its SN's node keys and the GK"""
        bs, subs, states, _ = group
        for sub in subs:
            for member in sub.members:
                state = states[member]
                assert state.path == sub.expected_keyring(member)
                for node_id in state.path[:-1]:
                    assert state.keys[node_id].expanded == sub.keys[node_id].expanded
                assert state.group_key.expanded == bs.gk.expanded

    def test_logic_seed_is_xor(self, group):
        """Test s_T1 = s_u1 xor s_u2"""
        _, subs, _, _ = group
        sn1 = subs[0]
        assert sn1.seeds["SN1.T1"] == logic_seed([sn1.seeds["u1"], sn1.seeds["u2"]])

    def test_subgroup_positions(self, group):
        """Test SN roots take positions 1..k in the BS code"""
        bs, subs, _, _ = group
        assert [s.index for s in subs] == [1, 2, 3]
        assert bs.degree == 3

    def test_seed_is_deterministic(self, config):
        """Test the same seed gives the same keys"""
        a = init_group(WALKTHROUGH_LAYOUT, config.codec_for, config.point_limit, seed=7)
        b = init_group(WALKTHROUGH_LAYOUT, GKMConfig().codec_for, config.point_limit, seed=7)
        assert a[0].gk == b[0].gk

    def test_bad_layouts(self, config):
        """Test empty subgroups and overlapping members are refused"""
        with pytest.raises(ConfigError):
            init_group({}, config.codec_for)
        with pytest.raises(ConfigError):
            init_group({"SN1": []}, config.codec_for)
        with pytest.raises(ConfigError):
            init_group({"SN1": ["a"], "SN2": ["a"]}, config.codec_for)


class TestMembershipEvents:
    """Test suite for join, leave, merge and partition handling"""

    @pytest.fixture
    def world(self):
        config = GKMConfig()
        bs, subs, states, _ = init_group(WALKTHROUGH_LAYOUT, config.codec_for, config.point_limit, seed=7)
        member_codec = next(iter(states.values())).codec
        return bs, {s.sn_id: s for s in subs}, states, member_codec

    def deliver(self, world, trace):
        bs, subs, states, codec = world
        return apply_transmissions(states, trace, codec)

    def assert_agreement(self, bs, sub, states):
        for member in sub.members:
            state = states[member]
            assert state.path == sub.expected_keyring(member)
            for node_id in state.path[:-1]:
                assert state.keys[node_id].expanded == sub.keys[node_id].expanded
        for member in bs.members:
            assert states[member].group_key.expanded == bs.gk.expanded

    def test_join_costs_h_multicasts_and_one_unicast(self, world):
        """Test u17 into SN1: SN1 sends h = 3 multicasts and one unicast"""
        bs, subs, states, _ = world
        trace = handle_join(subs["SN1"], "u17")
        assert len(multicasts(trace, "SN1")) == 3
        assert len(unicasts(trace)) == 1
        assert len(multicasts(trace, BS_ID)) == 1
        states = self.deliver(world, trace)
        assert states["u17"].path == ["SN1.T1", "SN1", BS_ID]
        self.assert_agreement(bs, subs["SN1"], states)

    def test_join_refreshes_unchanged_ancestors(self, world):
        """Test the SN1 root key is a refresh sealed only under the changed child"""
        _, subs, _, _ = world
        trace = handle_join(subs["SN1"], "u17")
        root_seals = [tx.message for tx in trace
                      if isinstance(tx.message, SealedKeyMsg) and tx.message.payload_key_node == "SN1"]
        assert len(root_seals) == 1
        assert root_seals[0].sealing_key_node == "SN1.T1"
        assert root_seals[0].refresh_nonce is not None

    def test_joiner_cannot_read_old_group_key(self, world):
        """Test backward secrecy: the joiner's keys open nothing sent before"""
        bs, subs, states, codec = world
        old_gk = bs.gk
        trace = handle_join(subs["SN1"], "u17")
        states = self.deliver(world, trace)
        joiner = states["u17"]
        assert joiner.group_key.expanded != old_gk.expanded
        for key in joiner.keys.values():
            assert key.expanded != old_gk.expanded

    def test_member_ignores_replays_and_foreign_broadcasts(self, world):
        """Test member_process drops stale broadcasts and other subgroups' traffic"""
        _, subs, _, _ = world
        trace = handle_join(subs["SN1"], "u17")
        states = self.deliver(world, trace)
        broadcast = next(tx.message for tx in trace if isinstance(tx.message, RekeyBroadcast))
        assert broadcast.target_node == "SN1.T1"

        u1 = states["u1"]
        held = dict(u1.keys)
        member_process(u1, broadcast)
        assert u1.keys == held

        u9 = states["u9"]
        before = (list(u9.path), dict(u9.keys))
        member_process(u9, broadcast)
        assert (u9.path, u9.keys) == before

    def test_leave_cost_and_forward_secrecy(self, world):
        """Test u18 join then leave in SN2: six multicasts, nothing readable by u18"""
        bs, subs, states, codec = world
        states = self.deliver(world, handle_join(subs["SN2"], "u18"))
        departed = states.pop("u18")
        world = (bs, subs, states, codec)

        trace = handle_leave(subs["SN2"], "u18")
        assert len(multicasts(trace)) == 6
        assert len(unicasts(trace)) == 0
        for tx in trace:
            assert "u18" not in tx.recipients
            if isinstance(tx.message, SealedKeyMsg):
                for key in departed.keys.values():
                    assert codec.try_open(key, tx.message) is None

        states = self.deliver(world, trace)
        self.assert_agreement(bs, subs["SN2"], states)
        assert check_balance(subs["SN2"].tree) == []

    def test_leave_keeps_pseudo_slot(self, world):
        """Test a leaver from a two-member parent is replaced by a pseudo-leaf"""
        _, subs, _, _ = world
        handle_join(subs["SN2"], "u18")
        assert render_tree(subs["SN2"].tree) == "SN2(SN2.T1(u9,u10),SN2.T2(u11,u18))"
        handle_leave(subs["SN2"], "u18")
        assert render_tree(subs["SN2"].tree) == "SN2(SN2.T1(u9,u10),SN2.T2(u11,SN2.P1))"

    def test_merge(self, world):
        """Test a block of new members joins SN3 and everyone agrees"""
        bs, subs, states, _ = world
        trace = handle_merge(subs["SN3"], ["n1", "n2", "n3", "n4"])
        assert len(unicasts(trace)) == 4
        states = self.deliver(world, trace)
        self.assert_agreement(bs, subs["SN3"], states)
        assert check_balance(subs["SN3"].tree) == []

    def test_merge_heavier_block(self, world):
        """Test a merge heavier than the subgroup keeps the SN identity"""
        bs, subs, states, _ = world
        newcomers = [f"n{i}" for i in range(12)]
        trace = handle_merge(subs["SN2"], newcomers)
        states = self.deliver(world, trace)
        assert subs["SN2"].tree.root.id == "SN2"
        assert subs["SN2"].tree.root.position == 2
        self.assert_agreement(bs, subs["SN2"], states)

    def test_partition(self, world):
        """Test a multi-member departure rekeys SN1 and the GK"""
        bs, subs, states, codec = world
        old_gk = bs.gk
        trace = handle_partition(subs["SN1"], ["u1", "u4", "u7"])
        for tx in trace:
            assert not {"u1", "u4", "u7"} & set(tx.recipients)
        for gone in ("u1", "u4", "u7"):
            states.pop(gone)
        states = self.deliver((bs, subs, states, codec), trace)
        assert bs.gk.expanded != old_gk.expanded
        self.assert_agreement(bs, subs["SN1"], states)

    def test_subgroup_empties(self, world):
        """Test partitioning a whole subgroup drops it from the GK"""
        bs, subs, states, codec = world
        trace = handle_partition(subs["SN2"], ["u9", "u10", "u11"])
        assert subs["SN2"].is_empty
        assert bs.degree == 2
        for gone in ("u9", "u10", "u11"):
            states.pop(gone)
        states = self.deliver((bs, subs, states, codec), trace)
        for member in bs.members:
            assert states[member].group_key.expanded == bs.gk.expanded

    def test_duplicate_join(self, world):
        """Test a member of one subgroup cannot join another"""
        _, subs, _, _ = world
        with pytest.raises(MembershipError):
            handle_join(subs["SN2"], "u1")

    def test_leave_unknown(self, world):
        """Test leaving a subgroup one is not in"""
        _, subs, _, _ = world
        with pytest.raises(MembershipError):
            handle_leave(subs["SN2"], "u1")

    def test_push_down_join_costs_one_extra_multicast(self, world):
        """Test u18 into SN2 splits the root: h + 1 = 4 multicasts, root key refreshed"""
        bs, subs, states, _ = world
        trace = handle_join(subs["SN2"], "u18")
        assert subs["SN2"].tree.last_insertion == "push_down"
        assert len(multicasts(trace, "SN2")) == 4
        assert len(unicasts(trace)) == 1
        root_seals = [tx.message for tx in trace
                      if isinstance(tx.message, SealedKeyMsg) and tx.message.payload_key_node == "SN2"]
        assert len(root_seals) == 1
        assert root_seals[0].sealing_key_node == "SN2.T2"
        assert root_seals[0].refresh_nonce is not None
        states = self.deliver(world, trace)
        assert states["u18"].path == ["SN2.T2", "SN2", BS_ID]
        self.assert_agreement(bs, subs["SN2"], states)

    def test_reused_position_ignored_by_former_holder(self, world):
        """Test a departed seed cannot recover at its old position under a new generation"""
        bs, subs, states, codec = world
        states = self.deliver(world, handle_join(subs["SN2"], "u18"))
        departed = states.pop("u18")
        handle_leave(subs["SN2"], "u18")
        seed = departed.seed
        sn_codec = subs["SN2"].codec

        trace = handle_join(subs["SN2"], "u19")
        for tx in trace:
            msg = tx.message
            if isinstance(msg, RekeyBroadcast) and seed.j in msg.points:
                assert msg.generations[msg.points.index(seed.j)] != seed.generation

        r = sn_codec.nonce_for(900, "SN2.T2")
        reissued = RekeyBroadcast("SN2.T2", r, (), epoch=900, points=(seed.j,),
                                  generations=(seed.generation + 1,))
        held = dict(departed.keys)
        member_process(departed, reissued)
        assert departed.keys == held

        same = RekeyBroadcast("SN2.T2", r, (), epoch=900, points=(seed.j,), generations=(seed.generation,))
        member_process(departed, same)
        assert departed.keys["SN2.T2"].epoch == 900

    def test_nonce_memory_stays_bounded(self, world):
        """Test a long run of joins leaves at most one live nonce per controller"""
        _, subs, _, _ = world
        for i in range(40):
            handle_join(subs["SN1"], f"j{i}")
        assert subs["SN1"].codec.outstanding_nonces <= 1


class TestPointSpace:
    """Test suite for code-position limits at init"""

    def test_subgroup_too_large_for_field(self):
        """Test 200 members in one subgroup exceed GF(2^8) positions"""
        config = GKMConfig()
        with pytest.raises(ConfigError):
            init_group({"SN1": [f"m{i}" for i in range(200)]}, config.codec_for, 255, seed=1)

    def test_too_many_subgroups(self):
        """Test more subgroups than BS positions is refused"""
        config = GKMConfig()
        with pytest.raises(ConfigError):
            init_group({f"SN{i}": [f"m{i}"] for i in range(1, 5)}, config.codec_for, 3, seed=1)
