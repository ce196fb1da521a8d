#!/usr/bin/env python3
"""
Measured-vs-analytic cost report

Rebuilds the per-event ledger from the message records of a trace, checks it
against the cost records the simulator wrote, and sets each event beside
the analytic formula for its kind. Text output goes through a Jinja2
template; a plain fallback is used when the template is missing.

Author: bdstest
License: Apache 2.0
Copyright: 2025 CDSI - Compliance Data Systems Insights
"""

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd
from jinja2 import Environment, FileSystemLoader, TemplateNotFound

try:
    from .formulas import (balanced_height, comparison_rows, formula_for, member_storage, sn_storage,
                           table_communication)
except (ImportError, ValueError):
    import sys
    sys.path.append(str(Path(__file__).parent.parent))
    from reporting.formulas import (balanced_height, comparison_rows, formula_for, member_storage,
                                    sn_storage, table_communication)

# Configure logging
logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).resolve().parents[2] / "templates" / "report"
OPS = ('C_E', 'C_D', 'C_H', 'C_M')
COLUMNS = ['index', 'op', 'sn', 'h', 'M', 'M_sn', 'U', 'bytes', *OPS,
           'expected_M', 'expected_U', 'formula', 'status']


@dataclass
class CostReport:
    """Per-event table, totals, comparison columns and ledger mismatches"""
    header: Dict[str, Any] = field(default_factory=dict)
    events: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=COLUMNS))
    totals: Dict[str, int] = field(default_factory=lambda: {'M': 0, 'U': 0, 'bytes': 0})
    comparison: List[Dict[str, Any]] = field(default_factory=list)
    storage: List[Dict[str, Any]] = field(default_factory=list)
    mismatches: List[str] = field(default_factory=list)

    @property
    def consistent(self) -> bool:
        return not self.mismatches

    def outside(self) -> pd.DataFrame:
        """Events whose measured cost falls outside an exact or bracketed formula"""
        if self.events.empty:
            return self.events
        return self.events[self.events['status'] == 'outside']

    def to_records(self) -> List[Dict[str, Any]]:
        rows = [{'type': 'report_event', **row} for row in self.events.to_dict(orient='records')]
        rows.append({'type': 'report_totals', **self.totals, 'consistent': self.consistent})
        rows.extend({'type': 'report_storage', **row} for row in self.storage)
        rows.extend({'type': 'report_comparison', **row} for row in self.comparison)
        return rows

    def render(self, fmt: str = 'text') -> str:
        if fmt == 'records':
            return "".join(json.dumps(r, sort_keys=True, default=str) + "\n" for r in self.to_records())
        return render_text(self)


def _group_by_index(records: List[Dict[str, Any]], kind: str) -> Dict[int, List[Dict[str, Any]]]:
    grouped: Dict[int, List[Dict[str, Any]]] = defaultdict(list)
    for record in records:
        if record.get('type') == kind:
            grouped[int(record['index'])].append(record)
    return grouped


def _measure(messages: List[Dict[str, Any]], sn: Optional[str]) -> Dict[str, int]:
    multicasts = [m for m in messages if m['cast'] != 'U']
    origins = Counter(m['origin'] for m in multicasts)
    return {
        'M': len(multicasts),
        'U': len(messages) - len(multicasts),
        'bytes': sum(int(m['bytes']) for m in messages),
        'M_sn': origins.get(sn, 0) if sn else 0,
    }


def _analytic(op: str, measured: Dict[str, int], cost: Dict[str, Any],
              members: List[str]) -> Dict[str, str]:
    """Expected M and U for this event and whether the measurement fits"""
    h = int(cost.get('h', 0))
    if op == 'init':
        formula, text = formula_for('init', n=len(members), h=h)
        ok = measured['U'] in formula.unicasts
        return {'expected_M': f"{formula.multicasts} per SN", 'expected_U': str(formula.unicasts),
                'formula': text, 'status': 'ok' if ok else 'outside'}
    if op == 'join':
        formula, text = formula_for('join', h=h)
        ok = measured['M_sn'] in formula.multicasts and measured['U'] in formula.unicasts
        rule = cost.get('rule')
        if rule:
            text = f"{text} [{rule}]"
        return {'expected_M': f"{formula.multicasts} from SN", 'expected_U': str(formula.unicasts),
                'formula': text, 'status': 'ok' if ok else 'outside'}
    if op == 'leave':
        formula, text = formula_for('leave', h=h, bs_degree=int(cost.get('bs_degree', 1)))
        ok = measured['M'] in formula.multicasts and measured['U'] in formula.unicasts
        return {'expected_M': str(formula.multicasts), 'expected_U': str(formula.unicasts),
                'formula': text, 'status': 'ok' if ok else 'outside'}
    if op == 'merge':
        formula, text = formula_for('merge', x=len(members), h=h, h1=balanced_height(len(members)))
        ok = measured['U'] in formula.unicasts
        return {'expected_M': str(formula.multicasts), 'expected_U': str(formula.unicasts),
                'formula': text, 'status': 'ok' if ok else 'outside'}
    formula, text = formula_for('partition', n=int(cost.get('members', 0)), h=max(h, 2))
    ok = measured['M'] <= formula.multicasts.high
    return {'expected_M': f"<= {int(formula.multicasts.high)}", 'expected_U': str(formula.unicasts),
            'formula': text, 'status': 'ok' if ok else 'outside'}


def build_report(records: List[Dict[str, Any]], params: Optional[Dict[str, float]] = None,
                 storage: Optional[List[Dict[str, Any]]] = None) -> CostReport:
    """Recompute the ledger from a parsed trace; an empty trace yields an all-zero report"""
    report = CostReport()
    headers = [r for r in records if r.get('type') == 'header']
    if headers:
        report.header = {k: v for k, v in headers[0].items() if k != 'type'}
    messages = _group_by_index(records, 'message')
    costs = {i: rs[-1] for i, rs in _group_by_index(records, 'cost').items()}
    events = {i: rs[-1] for i, rs in _group_by_index(records, 'event').items()}

    rows = []
    total_members = 0
    for index in sorted(set(events) | set(costs)):
        event = events.get(index, {})
        cost = costs.get(index, {})
        op = event.get('op') or cost.get('op', '?')
        sn = event.get('sn', cost.get('sn'))
        members = list(event.get('members', []))
        measured = _measure(messages.get(index, []), sn)

        for key in ('M', 'U', 'bytes'):
            if cost and int(cost.get(key, 0)) != measured[key]:
                report.mismatches.append(
                    f"event {index}: ledger {key}={cost.get(key)} but messages give {measured[key]}")
        if not cost:
            report.mismatches.append(f"event {index}: no cost record")

        ops = {op_name: sum(int(c.get(op_name, 0)) for c in cost.get('ops', {}).values())
               for op_name in OPS}
        row = {'index': index, 'op': op, 'sn': sn or '', 'h': int(cost.get('h', 0)), **measured, **ops}
        row.update(_analytic(op, measured, cost, members))
        rows.append(row)
        for key in ('M', 'U', 'bytes'):
            report.totals[key] += measured[key]
        if op == 'init':
            total_members = len(members)

    if rows:
        report.events = pd.DataFrame(rows, columns=COLUMNS)
    elif messages:
        report.mismatches.append("messages without event records")

    symbols = dict(params or {})
    symbols.setdefault('n', float(total_members))
    if 'h' not in symbols and rows:
        symbols['h'] = float(max(r['h'] for r in rows))
    field_bits = report.header.get('field_bits')
    if field_bits is not None:
        symbols.setdefault('m', float(field_bits))
    report.comparison = comparison_rows(params=symbols)
    h = int(symbols.get('h', 0))
    for op_name in ('init', 'join', 'leave'):
        report.comparison.append({'protocol': '2-3 tree', 'op': op_name, 'column': 'communication',
                                  'formula': table_communication(op_name, total_members, h), 'value': ''})
    report.storage = list(storage or [])

    if report.mismatches:
        logger.warning(f"trace ledger mismatches: {len(report.mismatches)}")
    logger.info(f"report over {len(rows)} events: M={report.totals['M']} U={report.totals['U']}")
    return report


def storage_rows(group: Any, members: Dict[str, Any], code_length: int,
                 nonce_bits: int) -> List[Dict[str, Any]]:
    """Per-SN and per-member secrets held, next to the analytic bit counts"""
    rows = []
    for sn_id, sub in sorted(group.subgroups.items()):
        h = sub.tree.height()
        analytic = sn_storage(len(sub.members), h, code_length, nonce_bits)
        rows.append({'holder': sn_id, 'items': sub.storage(), 'h': h,
                     'bits': str(analytic.bits), 'units': analytic.units})
        sizes = Counter(members[m].storage() for m in sub.members if m in members)
        for items, count in sorted(sizes.items()):
            path_h = items - 1
            analytic = member_storage(path_h, code_length, nonce_bits)
            rows.append({'holder': f"{sn_id} members x{count}", 'items': items, 'h': path_h,
                         'bits': str(analytic.bits), 'units': analytic.units})
    return rows


def _table(rows: List[Dict[str, Any]]) -> str:
    if not rows:
        return "(none)"
    return pd.DataFrame(rows).to_string(index=False)


def _context(report: CostReport) -> Dict[str, Any]:
    events = report.events.to_string(index=False) if not report.events.empty else "(no events)"
    return {
        'header': report.header,
        'events': events,
        'totals': report.totals,
        'storage': _table(report.storage) if report.storage else '',
        'comparison': _table(report.comparison),
        'mismatches': report.mismatches,
        'outside': len(report.outside()),
    }


def render_text(report: CostReport, template_dir: Optional[Path] = None) -> str:
    context = _context(report)
    env = Environment(loader=FileSystemLoader(str(template_dir or TEMPLATE_DIR)),
                      keep_trailing_newline=True)
    try:
        return env.get_template('cost_report.txt.j2').render(context)
    except TemplateNotFound:
        logger.warning("report template missing, using plain layout")
        return _fallback_text(context)


def _fallback_text(context: Dict[str, Any]) -> str:
    header = context['header']
    lines = [
        "COST REPORT",
        f"field GF(2^{header.get('field_bits', '?')}), hash {header.get('hash', '?')}, "
        f"cipher {header.get('cipher', '?')}, seed {header.get('seed', '?')}",
        "",
        context['events'],
        "",
        f"totals: M={context['totals']['M']} U={context['totals']['U']} bytes={context['totals']['bytes']}",
    ]
    if context['storage']:
        lines += ["", "storage:", context['storage']]
    lines += ["", "comparison:", context['comparison']]
    for mismatch in context['mismatches']:
        lines.append(f"MISMATCH {mismatch}")
    return "\n".join(lines) + "\n"
