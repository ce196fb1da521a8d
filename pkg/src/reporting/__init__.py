"""
Cost reporting: analytic formulas and the measured-vs-analytic report
"""

from .formulas import (COMPARISON, Band, EventFormula, StorageFormula, comparison_rows, formula_for,
                       init_cost, internal_nodes, join_cost, leave_cost, max_code_length, member_storage,
                       merge_cost, parse_params, partition_cost, sn_storage)
from .cost_report import CostReport, build_report, render_text, storage_rows

__all__ = [
    'COMPARISON',
    'Band',
    'EventFormula',
    'StorageFormula',
    'comparison_rows',
    'formula_for',
    'init_cost',
    'internal_nodes',
    'join_cost',
    'leave_cost',
    'max_code_length',
    'member_storage',
    'merge_cost',
    'parse_params',
    'partition_cost',
    'sn_storage',
    'CostReport',
    'build_report',
    'render_text',
    'storage_rows',
]
