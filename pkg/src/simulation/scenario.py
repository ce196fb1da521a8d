#!/usr/bin/env python3
"""
Scenario files: line-delimited JSON records

    {"type": "scenario", "seed": 7, "field_bits": 8}
    {"type": "layout", "sn": "SN1", "members": ["u1", "u2"]}
    {"type": "join", "sn": "SN1", "member": "u3"}
    {"type": "leave", "member": "u2"}
    {"type": "merge", "sn": "SN1", "members": ["u4", "u5"]}
    {"type": "partition", "members": ["u1", "u4"]}

Blank lines and lines starting with '#' are skipped.

Author: bdstest
License: Apache 2.0
Copyright: 2025 CDSI - Compliance Data Systems Insights
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

try:
    from ..core.exceptions import ScenarioError
except (ImportError, ValueError):
    import sys
    sys.path.append(str(Path(__file__).parent.parent))
    from core.exceptions import ScenarioError

# Configure logging
logger = logging.getLogger(__name__)

EVENT_TYPES = ('join', 'leave', 'merge', 'partition')
SETTING_KEYS = ('seed', 'field_bits', 'hash_name', 'cipher_name', 'nonce_bits', 'secret_bits')


@dataclass(frozen=True)
class ScenarioEvent:
    """One membership event; sn is resolved for leave/partition"""
    op: str
    members: Tuple[str, ...]
    sn: Optional[str] = None
    line: int = 0

    def to_record(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {'type': self.op}
        if self.op in ('join', 'merge'):
            record['sn'] = self.sn
        if self.op in ('join', 'leave'):
            record['member'] = self.members[0]
        else:
            record['members'] = list(self.members)
        return record


@dataclass
class Scenario:
    """Initial layout plus an ordered event list"""
    seed: int = 7
    layout: Dict[str, List[str]] = field(default_factory=dict)
    events: List[ScenarioEvent] = field(default_factory=list)
    settings: Dict[str, Any] = field(default_factory=dict)

    def validate(self) -> "Scenario":
        """Replay membership so every event refers to consistent ids"""
        if not self.layout:
            raise ScenarioError("scenario has no layout records")
        where: Dict[str, str] = {}
        for sn, members in self.layout.items():
            if not members:
                raise ScenarioError(f"{sn} starts empty")
            for member in members:
                if member in where:
                    raise ScenarioError(f"{member} placed in {where[member]} and {sn}")
                where[member] = sn

        resolved = []
        for event in self.events:
            if len(set(event.members)) != len(event.members) or not event.members:
                raise ScenarioError(f"{event.op} needs distinct members", event.line)
            if event.op in ('join', 'merge'):
                if event.sn not in self.layout:
                    raise ScenarioError(f"unknown subgroup '{event.sn}'", event.line)
                for member in event.members:
                    if member in where:
                        raise ScenarioError(f"{member} is already a member", event.line)
                    where[member] = event.sn
                resolved.append(event)
            else:
                owners = set()
                for member in event.members:
                    if member not in where:
                        raise ScenarioError(f"unknown member '{member}'", event.line)
                    owners.add(where.pop(member))
                if len(owners) != 1:
                    raise ScenarioError(f"{event.op} spans subgroups {sorted(owners)}", event.line)
                resolved.append(ScenarioEvent(event.op, event.members, owners.pop(), event.line))
        self.events = resolved
        return self

    def to_lines(self) -> List[str]:
        header = {'type': 'scenario', 'seed': self.seed}
        header.update(self.settings)
        lines = [json.dumps(header, sort_keys=True)]
        for sn, members in self.layout.items():
            lines.append(json.dumps({'type': 'layout', 'sn': sn, 'members': members}, sort_keys=True))
        lines.extend(json.dumps(e.to_record(), sort_keys=True) for e in self.events)
        return lines


def _members_field(record: Dict[str, Any], line: int) -> Tuple[str, ...]:
    if 'member' in record:
        value = [record['member']]
    else:
        value = record.get('members')
    if not isinstance(value, list) or not all(isinstance(m, str) and m for m in value):
        raise ScenarioError("expected member id strings", line)
    return tuple(value)


def parse_scenario(text: str) -> Scenario:
    scenario = Scenario()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith('#'):
            continue
        try:
            record = json.loads(stripped)
        except json.JSONDecodeError as e:
            raise ScenarioError(f"invalid JSON: {e.msg}", line_no) from e
        if not isinstance(record, dict) or 'type' not in record:
            raise ScenarioError("record needs a 'type' field", line_no)

        kind = record['type']
        if kind == 'scenario':
            unknown = set(record) - set(SETTING_KEYS) - {'type'}
            if unknown:
                raise ScenarioError(f"unknown settings {sorted(unknown)}", line_no)
            scenario.seed = int(record.get('seed', scenario.seed))
            scenario.settings.update({k: v for k, v in record.items() if k not in ('type', 'seed')})
        elif kind == 'layout':
            sn = record.get('sn')
            if not isinstance(sn, str) or sn in scenario.layout:
                raise ScenarioError("layout needs a new 'sn' id", line_no)
            scenario.layout[sn] = list(_members_field(record, line_no))
        elif kind in EVENT_TYPES:
            sn = record.get('sn')
            if kind in ('join', 'merge') and not isinstance(sn, str):
                raise ScenarioError(f"{kind} needs an 'sn' field", line_no)
            members = _members_field(record, line_no)
            if kind in ('join', 'leave') and len(members) != 1:
                raise ScenarioError(f"{kind} takes exactly one member", line_no)
            scenario.events.append(ScenarioEvent(kind, members, sn, line_no))
        else:
            raise ScenarioError(f"unknown record type '{kind}'", line_no)
    return scenario.validate()


def load_scenario(path: str) -> Scenario:
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise ScenarioError(f"cannot read {path}: {e}") from e
    return parse_scenario(text)


def write_scenario(scenario: Scenario, path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(scenario.to_lines()) + "\n", encoding='utf-8')
