#!/usr/bin/env python3
"""
Protocol Integration Tests
End-to-end runs: scenario file to trace to report, every event kind under
every cipher, and seeded fuzz campaigns

Author: bdstest
License: Apache 2.0
Copyright: 2025 CDSI - Compliance Data Systems Insights
"""

import pytest

# Import systems for testing
import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))

from core.keytree import check_balance, render_tree
from reporting.cost_report import build_report
from simulation.fuzz import run_campaign, run_campaigns
from simulation.scenario import Scenario, ScenarioEvent, load_scenario
from simulation.simnet import Simulation, parse_trace, dump_trace, run_scenario
from utils.config import GKMConfig

SCENARIO_DIR = os.path.join(os.path.dirname(__file__), '..', 'data', 'scenarios')


def mixed_scenario() -> Scenario:
    """Every event kind, including a subgroup emptied and refilled"""
    scenario = Scenario(seed=21, layout={
        "SN1": [f"a{i}" for i in range(10)],
        "SN2": ["b0", "b1", "b2", "b3"],
        "SN3": ["c0"],
    })
    scenario.events = [
        ScenarioEvent('join', ('a10',), 'SN1'),
        ScenarioEvent('leave', ('a3',)),
        ScenarioEvent('merge', tuple(f"n{i}" for i in range(7)), 'SN2'),
        ScenarioEvent('partition', ('a0', 'a1', 'a5', 'a9')),
        ScenarioEvent('leave', ('c0',)),
        ScenarioEvent('join', ('c1',), 'SN3'),
        ScenarioEvent('join', ('a3',), 'SN1'),
        ScenarioEvent('merge', ('m0', 'm1'), 'SN3'),
        ScenarioEvent('partition', ('b0', 'b1', 'n2')),
    ]
    return scenario.validate()


@pytest.mark.integration
class TestWalkthroughEndToEnd:
    """Bundled scenario through the simulator and the report"""

    def test_trace_round_trip_report(self):
        """Test the report from a dumped trace equals the in-memory one"""
        scenario = load_scenario(os.path.join(SCENARIO_DIR, 'walkthrough.jsonl'))
        result = run_scenario(scenario, GKMConfig())
        direct = build_report(result.records)
        reread = build_report(parse_trace(dump_trace(result.records).encode()))
        assert direct.consistent and reread.consistent
        assert direct.totals == reread.totals
        assert direct.outside().empty

    def test_final_trees(self):
        """Test the trees after join u17, join u18 and leave u18"""
        scenario = load_scenario(os.path.join(SCENARIO_DIR, 'walkthrough.jsonl'))
        result = run_scenario(scenario, GKMConfig(), observe=False)
        subs = result.group.subgroups
        assert render_tree(subs["SN1"].tree) == "SN1(SN1.T1(u1,u2,u17),SN1.T2(u3,u4,u5),SN1.T3(u6,u7,u8))"
        assert render_tree(subs["SN2"].tree) == "SN2(SN2.T1(u9,u10),SN2.T2(u11,SN2.P1))"


@pytest.mark.integration
class TestEveryEventKind:
    """Mixed scenario under each cipher and hash"""

    @pytest.mark.parametrize("settings", [
        {},
        {'cipher_name': 'aes-gcm'},
        {'hash_name': 'sha512', 'nonce_bits': 128},
        {'field_bits': 16},
    ])
    def test_mixed_scenario(self, settings):
        result = run_scenario(mixed_scenario(), GKMConfig(**settings))
        for sub in result.group.subgroups.values():
            assert check_balance(sub.tree) == []
        for name in ('forward', 'backward', 'conspiracy'):
            assert result.probes[name].seal_opens == 0
        report = build_report(result.records)
        assert report.consistent
        assert sorted(result.members) == sorted(result.group.members)

    def test_refilled_subgroup_keeps_its_position(self):
        result = run_scenario(mixed_scenario(), GKMConfig(), observe=False)
        sn3 = result.group.subgroups["SN3"]
        assert sn3.index == 3
        assert sorted(sn3.members) == ["c1", "m0", "m1"]


@pytest.mark.integration
class TestFuzzCampaigns:
    """Seeded randomized campaigns"""

    def test_short_campaign(self):
        report = run_campaign(200, seed=3, config=GKMConfig(), members=60, subgroups=4)
        assert report.violations == []
        assert report.passed
        assert report.max_merge_gap <= 3

    def test_replays_cover_whole_history(self, mocker):
        """Test a default campaign replays every principal with no window"""
        replay = mocker.spy(Simulation, 'run_probes')
        run_campaign(20, seed=1, config=GKMConfig(), members=20, subgroups=2)
        assert replay.call_args.kwargs == {'window': None, 'every': 1}

    def test_null_cipher_is_caught(self):
        report = run_campaign(100, seed=3, config=GKMConfig(cipher_name='null'), members=60, subgroups=4)
        assert not report.passed
        caught = [v for v in report.violations if "holds the current key" in v]
        assert caught or any("opened" in failure for failure in report.probe_failures())

    @pytest.mark.slow
    def test_long_campaigns(self):
        """Test several thousand events over independent seeds"""
        reports = run_campaigns(4000, [1, 2, 3, 4], config=GKMConfig(), members=300, subgroups=6)
        for report in reports:
            assert report.violations == []
            assert report.passed
            assert report.max_merge_gap <= 3

    @pytest.mark.slow
    def test_hundred_thousand_events(self):
        """Test 10^5 events over seeds 0-9 keep balance, agreement and key safety"""
        reports = run_campaigns(100_000, list(range(10)), config=GKMConfig(), members=300, subgroups=6)
        assert sum(r.events_run for r in reports) == 100_000
        for report in reports:
            assert report.violations == []
            assert report.passed
            assert report.max_merge_gap <= 3
