"""
Simulation harness: scenarios, the simulated network and fuzz campaigns
"""

from .scenario import Scenario, ScenarioEvent, load_scenario, parse_scenario, write_scenario
from .simnet import (AdversaryObserver, CostLedger, EventCost, Knowledge, ProbeResult, ScenarioResult,
                     Simulation, deliver, parse_trace, probe_backward_secrecy, probe_conspiracy,
                     probe_forward_secrecy, probe_guessing, read_trace, run_scenario, write_trace)
from .fuzz import FuzzReport, random_layout, run_campaign, run_campaigns

__all__ = [
    'Scenario',
    'ScenarioEvent',
    'load_scenario',
    'parse_scenario',
    'write_scenario',
    'AdversaryObserver',
    'CostLedger',
    'EventCost',
    'Knowledge',
    'ProbeResult',
    'ScenarioResult',
    'Simulation',
    'deliver',
    'parse_trace',
    'read_trace',
    'write_trace',
    'probe_forward_secrecy',
    'probe_backward_secrecy',
    'probe_conspiracy',
    'probe_guessing',
    'run_scenario',
    'FuzzReport',
    'random_layout',
    'run_campaign',
    'run_campaigns',
]
