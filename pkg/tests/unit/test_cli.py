#!/usr/bin/env python3
"""
Unit tests for the gkm command line
"""

import json

import pytest
from click.testing import CliRunner

# Import the module under test
import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', '..', 'src'))

from cli.main import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, cli
from core.exceptions import InvariantViolation

WALKTHROUGH = os.path.join(os.path.dirname(__file__), '..', '..', 'data', 'scenarios', 'walkthrough.jsonl')


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, *args):
    return runner.invoke(cli, list(args), obj={})


class TestRunCommand:
    """Test suite for gkm run"""

    def test_walkthrough_passes(self, runner):
        result = invoke(runner, 'run', '--scenario', WALKTHROUGH)
        assert result.exit_code == EXIT_OK
        assert "COST REPORT" in result.output
        assert "probe forward: seal opens 0/" in result.output
        assert "PASS" in result.output

    def test_same_seed_same_output(self, runner):
        """Test two runs with one seed print the same report"""
        first = invoke(runner, 'run', '--scenario', WALKTHROUGH, '--seed', '11')
        second = invoke(runner, 'run', '--scenario', WALKTHROUGH, '--seed', '11')
        assert first.exit_code == EXIT_OK
        assert first.stdout == second.stdout

    def test_writes_trace_and_report(self, runner, tmp_path):
        result = invoke(runner, 'run', '--scenario', WALKTHROUGH, '--out', str(tmp_path),
                        '--format', 'records', '--no-probes')
        assert result.exit_code == EXIT_OK
        trace = (tmp_path / "trace.jsonl").read_text().splitlines()
        assert json.loads(trace[0])['type'] == 'header'
        assert (tmp_path / "report.jsonl").exists()

    def test_null_cipher_fails_run(self, runner):
        """Test the negative-control cipher fails the run"""
        result = invoke(runner, 'run', '--scenario', WALKTHROUGH, '--cipher', 'null')
        assert result.exit_code == EXIT_FAILURE
        assert "FAIL" in result.output

    @pytest.mark.parametrize("field_bits", ['4', '16'])
    def test_other_fields(self, runner, field_bits):
        result = invoke(runner, 'run', '--scenario', WALKTHROUGH, '--field-bits', field_bits)
        assert result.exit_code == EXIT_OK

    def test_bad_scenario_line(self, runner, tmp_path):
        """Test a scenario parse error exits 2 and names the line"""
        path = tmp_path / "bad.jsonl"
        path.write_text('{"type": "layout", "sn": "SN1", "members": ["a"]}\n{"type": "leave", "member": "b"}\n')
        result = invoke(runner, 'run', '--scenario', str(path))
        assert result.exit_code == EXIT_USAGE
        assert "line 2" in result.output

    def test_missing_scenario(self, runner, tmp_path):
        result = invoke(runner, 'run', '--scenario', str(tmp_path / "absent.jsonl"))
        assert result.exit_code == EXIT_USAGE

    def test_invariant_violation(self, runner, mocker):
        """Test a failed invariant exits 1 with the event and a tree snapshot"""
        mocker.patch('cli.main.run_scenario',
                     side_effect=InvariantViolation("SN1 unbalanced", 2, {'tree': "SN1[3](u1[0])"}))
        result = invoke(runner, 'run', '--scenario', WALKTHROUGH)
        assert result.exit_code == EXIT_FAILURE
        assert "FAIL event 2: SN1 unbalanced" in result.output
        assert "SN1[3](u1[0])" in result.output

    def test_bad_params(self, runner):
        result = invoke(runner, 'run', '--scenario', WALKTHROUGH, '--params', 'oops')
        assert result.exit_code == EXIT_USAGE


class TestFuzzCommand:
    """Test suite for gkm fuzz"""

    def test_zero_iterations(self, runner):
        result = invoke(runner, 'fuzz', '--iterations', '0')
        assert result.exit_code == EXIT_OK
        assert "PASS 0 events" in result.output

    def test_short_campaign(self, runner):
        result = invoke(runner, 'fuzz', '--iterations', '30', '--members', '30', '--subgroups', '3')
        assert result.exit_code == EXIT_OK
        assert "PASS 30 events" in result.output

    def test_records_output(self, runner, tmp_path):
        result = invoke(runner, 'fuzz', '--iterations', '10', '--members', '20', '--subgroups', '2',
                        '--shards', '2', '--format', 'records', '--out', str(tmp_path))
        assert result.exit_code == EXIT_OK
        lines = (tmp_path / "fuzz.jsonl").read_text().splitlines()
        assert [json.loads(line)['seed'] for line in lines] == [7, 8]

    def test_null_cipher_campaign_fails(self, runner):
        """Test the fuzzer catches the negative-control cipher and prints a reproducer"""
        result = invoke(runner, 'fuzz', '--iterations', '60', '--members', '30', '--subgroups', '3',
                        '--cipher', 'null')
        assert result.exit_code == EXIT_FAILURE
        assert "reproduce with: gkm fuzz --seed 7" in result.output

    def test_negative_iterations(self, runner):
        result = invoke(runner, 'fuzz', '--iterations', '-1')
        assert result.exit_code == EXIT_USAGE

    def test_replay_defaults_cover_whole_history(self, runner, mocker):
        """Test the campaign replays everyone over the whole history by default"""
        campaigns = mocker.patch('cli.main.run_campaigns', return_value=[])
        invoke(runner, 'fuzz', '--iterations', '5')
        kwargs = campaigns.call_args.kwargs
        assert kwargs['window'] is None
        assert kwargs['sample_every'] is None

    def test_sampling_is_opt_in(self, runner, mocker):
        """Test --window and --sample-every reach the campaign"""
        campaigns = mocker.patch('cli.main.run_campaigns', return_value=[])
        invoke(runner, 'fuzz', '--iterations', '5', '--window', '20', '--sample-every', '10')
        kwargs = campaigns.call_args.kwargs
        assert (kwargs['window'], kwargs['sample_every']) == (20, 10)

    @pytest.mark.parametrize("flag", ['--window', '--sample-every'])
    def test_sampling_must_be_positive(self, runner, flag):
        result = invoke(runner, 'fuzz', '--iterations', '5', flag, '0')
        assert result.exit_code == EXIT_USAGE


class TestLoggingOptions:
    """Test suite for logging set-up from flags and config"""

    @pytest.fixture
    def config_file(self, tmp_path):
        path = tmp_path / "gkm.yaml"
        path.write_text(f"gkm:\n  log_level: DEBUG\n  log_dir: {tmp_path / 'logs'}\n")
        return path

    def test_config_supplies_log_settings(self, runner, mocker, config_file, tmp_path):
        """Test log level and directory fall back to the config file"""
        configure = mocker.patch('cli.main.configure_secure_logging')
        invoke(runner, '--config', str(config_file), 'fuzz', '--iterations', '0')
        configure.assert_called_once_with(log_level='DEBUG', log_dir=str(tmp_path / 'logs'))

    def test_flags_override_config(self, runner, mocker, config_file, tmp_path):
        """Test explicit flags win over the config file"""
        configure = mocker.patch('cli.main.configure_secure_logging')
        invoke(runner, '--config', str(config_file), '--log-level', 'ERROR', '--log-dir', str(tmp_path),
               'fuzz', '--iterations', '0')
        configure.assert_called_once_with(log_level='ERROR', log_dir=str(tmp_path))


class TestReportCommand:
    """Test suite for gkm report"""

    @pytest.fixture
    def trace_path(self, runner, tmp_path):
        invoke(runner, 'run', '--scenario', WALKTHROUGH, '--out', str(tmp_path), '--no-probes')
        return tmp_path / "trace.jsonl"

    def test_report_from_trace(self, runner, trace_path):
        result = invoke(runner, 'report', str(trace_path))
        assert result.exit_code == EXIT_OK
        assert "Totals: M=" in result.output

    def test_truncated_trace(self, runner, trace_path):
        """Test a cut trace exits 2 and reports the byte offset"""
        data = trace_path.read_bytes()
        trace_path.write_bytes(data[:-5])
        result = invoke(runner, 'report', str(trace_path))
        assert result.exit_code == EXIT_USAGE
        assert "byte offset" in result.output

    def test_tampered_ledger(self, runner, trace_path):
        """Test a cost record that disagrees with its messages exits 1"""
        lines = trace_path.read_text().splitlines()
        records = [json.loads(line) for line in lines]
        for record in records:
            if record['type'] == 'cost' and record['index'] == 1:
                record['M'] += 2
        trace_path.write_text("".join(json.dumps(r) + "\n" for r in records))
        result = invoke(runner, 'report', str(trace_path))
        assert result.exit_code == EXIT_FAILURE
        assert "MISMATCH event 1" in result.output

    def test_missing_trace(self, runner, tmp_path):
        result = invoke(runner, 'report', str(tmp_path / "absent.jsonl"))
        assert result.exit_code == EXIT_USAGE
