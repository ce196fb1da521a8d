#!/usr/bin/env python3
"""
Randomized membership campaigns

Drives a Simulation with a seeded mix of joins, leaves, merges and
partitions, then runs the secrecy probes. Any invariant violation stops the
campaign and is reported with the seed that reproduces it.

Author: bdstest
License: Apache 2.0
Copyright: 2025 CDSI - Compliance Data Systems Insights
"""

import logging
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

try:
    from ..core.exceptions import GroupKeyError, InvariantViolation, MergeAttachmentError
    from ..utils.config import GKMConfig, load_config
    from ..utils.secure_logging import get_secure_logger
    from .scenario import ScenarioEvent
    from .simnet import ProbeResult, Simulation
except (ImportError, ValueError):
    import sys
    sys.path.append(str(Path(__file__).parent.parent))
    from core.exceptions import GroupKeyError, InvariantViolation, MergeAttachmentError
    from utils.config import GKMConfig, load_config
    from utils.secure_logging import get_secure_logger
    from simulation.scenario import ScenarioEvent
    from simulation.simnet import ProbeResult, Simulation

# Configure logging
logger = logging.getLogger(__name__)
audit = get_secure_logger()

EVENT_MIX = {'join': 0.35, 'leave': 0.35, 'merge': 0.15, 'partition': 0.15}
MAX_DECODE_RATE = 0.01
MIN_DECODE_SAMPLE = 500
CAPACITY_MARGIN = 16


@dataclass
class FuzzReport:
    """Outcome of one campaign"""
    seed: int
    events_run: int = 0
    violations: List[str] = field(default_factory=list)
    probes: Dict[str, ProbeResult] = field(default_factory=dict)
    max_merge_gap: int = 0
    elapsed: float = 0.0
    op_counts: Dict[str, int] = field(default_factory=dict)

    def probe_failures(self) -> List[str]:
        failures = []
        for name in ('forward', 'backward', 'conspiracy'):
            result = self.probes.get(name)
            if result is not None and result.seal_opens:
                failures.append(f"{name} probe opened {result.seal_opens} sealed messages")
        for name in ('forward', 'backward', 'conspiracy', 'guessing'):
            result = self.probes.get(name)
            if result is not None and result.decode_attempts >= MIN_DECODE_SAMPLE \
                    and result.decode_rate > MAX_DECODE_RATE:
                failures.append(f"{name} decode rate {result.decode_rate:.4f} above {MAX_DECODE_RATE}")
        return failures

    @property
    def passed(self) -> bool:
        return not self.violations and not self.probe_failures()

    def to_dict(self) -> Dict[str, Any]:
        return {
            'seed': self.seed, 'events': self.events_run, 'passed': self.passed,
            'violations': self.violations, 'probe_failures': self.probe_failures(),
            'probes': {name: r.to_dict() for name, r in self.probes.items()},
            'max_merge_gap': self.max_merge_gap, 'elapsed': round(self.elapsed, 3),
            'ops': self.op_counts,
        }


def random_layout(rng: random.Random, members: int, subgroups: int) -> Dict[str, List[str]]:
    """Spread members round-robin over subgroups SN1..SNk"""
    subgroups = max(1, min(subgroups, members))
    layout: Dict[str, List[str]] = {f"SN{i}": [] for i in range(1, subgroups + 1)}
    names = list(layout)
    for i in range(members):
        layout[names[i % subgroups]].append(f"m{i}")
    return layout


class EventGenerator:
    """Draws the next valid event from the live simulation state"""

    def __init__(self, rng: random.Random, sim: Simulation, mix: Optional[Dict[str, float]] = None,
                 target_members: int = 0):
        self.rng = rng
        self.sim = sim
        self.mix = mix or EVENT_MIX
        self.target = target_members
        self._serial = sum(len(s.members) for s in sim.group.subgroups.values())

    def _fresh_ids(self, count: int) -> List[str]:
        ids = [f"m{self._serial + i}" for i in range(count)]
        self._serial += count
        return ids

    def _room(self, extra: int) -> List[str]:
        """Subgroups whose point space can take extra leaves plus new logic nodes"""
        room = []
        for sn_id, sub in self.sim.group.subgroups.items():
            pool = sub.tree.factory.pool
            if pool.in_use + 2 * extra + CAPACITY_MARGIN <= pool.limit:
                room.append(sn_id)
        return room

    def next_event(self) -> Optional[ScenarioEvent]:
        populated = [s for s in self.sim.group.subgroups.values() if s.members]
        total = sum(len(s.members) for s in populated)
        weights = dict(self.mix)
        if self.target and total < 0.8 * self.target:
            weights['join'] *= 2
            weights['merge'] *= 2
        elif self.target and total > 1.2 * self.target:
            weights['leave'] *= 2
            weights['partition'] *= 2
        ops = list(weights)
        for _ in range(8):
            op = self.rng.choices(ops, [weights[o] for o in ops])[0]
            if op in ('join', 'merge'):
                count = 1 if op == 'join' else self.rng.randint(2, 6)
                room = self._room(count)
                if not room:
                    continue
                sn = self.rng.choice(sorted(room))
                return ScenarioEvent(op, tuple(self._fresh_ids(count)), sn)
            if not populated:
                continue
            sub = self.rng.choice(populated)
            members = sub.members
            if op == 'leave':
                return ScenarioEvent(op, (self.rng.choice(members),), sub.sn_id)
            count = self.rng.randint(1, min(5, len(members)))
            return ScenarioEvent(op, tuple(self.rng.sample(members, count)), sub.sn_id)
        return None


def run_campaign(events: int, seed: int = 0, config: Optional[GKMConfig] = None,
                 members: Optional[int] = None, subgroups: Optional[int] = None,
                 window: Optional[int] = None, sample_every: Optional[int] = None,
                 observe: bool = True) -> FuzzReport:
    """One seeded campaign; violations are collected, never raised.

    Departed and joined principals are all replayed over the whole history
    unless window or sample_every narrow it.
    """
    config = config or load_config()
    fuzz = config.fuzz
    members = members if members is not None else int(fuzz.get('members', 1000))
    subgroups = subgroups if subgroups is not None else int(fuzz.get('subgroups', 8))
    sample_every = sample_every if sample_every is not None else int(fuzz.get('sample_every', 1))

    report = FuzzReport(seed=seed)
    rng = random.Random(seed)
    started = time.perf_counter()
    try:
        sim = Simulation(random_layout(rng, members, subgroups), config, seed=seed, observe=observe)
    except GroupKeyError as e:
        report.violations.append(f"init: {e}")
        return report

    generator = EventGenerator(rng, sim, target_members=members)
    counts: Dict[str, int] = {}
    for _ in range(events):
        event = generator.next_event()
        if event is None:
            break
        try:
            sim.apply(event)
        except InvariantViolation as e:
            report.violations.append(f"seed {seed}: {e}")
            logger.error(f"campaign seed {seed} failed: {e} {e.snapshot}")
            break
        except GroupKeyError as e:
            if isinstance(e, MergeAttachmentError):
                audit.log_security_event('merge_attachment_miss', {'seed': seed, 'event': sim.index})
            report.violations.append(f"seed {seed}, event {sim.index}: {type(e).__name__}: {e}")
            logger.error(f"campaign seed {seed} failed at event {sim.index}: {e}")
            break
        counts[event.op] = counts.get(event.op, 0) + 1
        report.events_run += 1

    if observe:
        report.probes = sim.run_probes(random.Random(seed), window=window, every=max(1, sample_every))
    report.max_merge_gap = sim.max_merge_gap
    report.op_counts = counts
    report.elapsed = time.perf_counter() - started
    logger.info(f"campaign seed {seed}: {report.events_run} events, passed={report.passed}")
    return report


def run_campaigns(events: int, seeds: Sequence[int], **kwargs: Any) -> List[FuzzReport]:
    """Independent campaigns, split evenly over the seeds"""
    if not seeds:
        return []
    per_seed = events // len(seeds)
    extra = events - per_seed * len(seeds)
    return [run_campaign(per_seed + (1 if i < extra else 0), seed, **kwargs)
            for i, seed in enumerate(seeds)]
