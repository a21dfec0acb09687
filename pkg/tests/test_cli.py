import json
import math
import socket
import threading

import pytest

from conftest import SMALL
from covspec.cli import ABLATIONS, parse_grid, run_command, short_override
from covspec.errors import ConfigError
from covspec.harness.records import CSV_FIELDS, read_csv

OVERRIDES = [arg for override in SMALL for arg in ('--override', override)]


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(('127.0.0.1', 0))
        return sock.getsockname()[1]


def rounds(details):
    with details.open() as f:
        records = [json.loads(line) for line in f]
    return [r for r in records if r['_type'] == 'round']


def without_run_id(rows):
    return [{key: value for key, value in row.items() if key != 'run_id'} for row in rows]


class TestRun:
    def test_outputs(self, tmp_path):
        assert run_command(['run', '--output-dir', str(tmp_path), '--fingerprint', str(tmp_path / 'fp.out'),
                            *OVERRIDES]) == 0
        assert (tmp_path / 'runs.csv').read_text().splitlines()[0] == ','.join(CSV_FIELDS)
        rows = read_csv(tmp_path / 'runs.csv')
        assert [row['run_id'] for row in rows] == ['run-s0']
        assert rows[0]['vis_red'] == rows[0]['dvc'] == '1'
        assert len((tmp_path / 'fp.out').read_text().split()) == 9
        types = [json.loads(line)['_type'] for line in (tmp_path / 'details.jsonl').read_text().splitlines()]
        assert types[0] == 'parameter' and types[-1] == 'results'

    def test_same_seed_same_rows(self, tmp_path):
        for name in ('a', 'b'):
            run_command(['run', '--seed', '7', '--output-dir', str(tmp_path / name), *OVERRIDES])
        assert read_csv(tmp_path / 'a' / 'runs.csv') == read_csv(tmp_path / 'b' / 'runs.csv')

    def test_episodes(self, tmp_path):
        run_command(['run', '--seed', '3', '--output-dir', str(tmp_path), *OVERRIDES, '--override', 'episodes=2'])
        assert [row['seed'] for row in read_csv(tmp_path / 'runs.csv')] == ['3', '4']

    def test_params_file(self, tmp_path):
        params = tmp_path / 'params.yaml'
        params.write_text("drafting:\n  gamma: 0.5\n")
        assert run_command(['run', str(params), '--output-dir', str(tmp_path), *OVERRIDES]) == 0
        assert float(read_csv(tmp_path / 'runs.csv')[0]['gamma']) == 0.5

    def test_snr_scales_communication_time(self, tmp_path):
        for snr in (10, 20):
            run_command(['run', '--output-dir', str(tmp_path / str(snr)), *OVERRIDES, '--override', f'snr_db={snr}'])
        low, high = rounds(tmp_path / '10' / 'details.jsonl'), rounds(tmp_path / '20' / 'details.jsonl')
        assert [r['S_up'] for r in low] == [r['S_up'] for r in high]
        for a, b in zip(low, high):
            assert b['T_comm'] / a['T_comm'] == pytest.approx(math.log2(11) / math.log2(101), rel=1e-9)

    @pytest.mark.parametrize("override", ['no_such_knob=1', 'agreement=1.5', 'mode=full', 'gamma'])
    def test_bad_override(self, tmp_path, override):
        assert run_command(['run', '--output-dir', str(tmp_path), *OVERRIDES, '--override', override]) == 2

    def test_missing_params_file(self, tmp_path):
        assert run_command(['run', str(tmp_path / 'missing.yaml'), '--output-dir', str(tmp_path)]) == 2


class TestSweep:
    def test_grid(self, tmp_path):
        assert run_command(['sweep', '--output-dir', str(tmp_path), *OVERRIDES, '--grid', 'gamma=0.5,0.7,0.9']) == 0
        rows = read_csv(tmp_path / 'runs.csv')
        assert [row['run_id'] for row in rows] == ['gamma=0.5-s0', 'gamma=0.7-s0', 'gamma=0.9-s0']
        assert [float(row['gamma']) for row in rows] == [0.5, 0.7, 0.9]

    def test_ablation(self, tmp_path):
        assert run_command(['sweep', '--output-dir', str(tmp_path), *OVERRIDES, '--ablation']) == 0
        rows = {row['run_id']: row for row in read_csv(tmp_path / 'runs.csv')}
        assert len(rows) == len(ABLATIONS) + 2
        assert {'edge-only-s0', 'device-only-s0'} <= set(rows)
        flags = ['vis_red', 'tok_sel', 'm_gate', 'len_adapt', 'branch', 'dvc']
        assert [rows['vanilla-s0'][f] for f in flags] == ['0'] * 6
        assert [rows['all-on-s0'][f] for f in flags] == ['1'] * 6
        assert rows['wo-gating-s0']['m_gate'] == '0'
        assert rows['random-token-s0']['vis_red'] == '1' and rows['random-token-s0']['tok_sel'] == '0'

    def test_parse_grid(self):
        assert parse_grid(['gamma=0.5,0.7', 'B_vis=16']) == [['drafting.gamma=0.5', 'selection.B_vis=16'],
                                                              ['drafting.gamma=0.7', 'selection.B_vis=16']]
        assert parse_grid([]) == [[]]
        with pytest.raises(ConfigError):
            parse_grid(['gamma'])
        assert short_override('drafting.gamma=0.5') == 'gamma=0.5'


def test_print_config(capsys):
    assert run_command(['print-config']) == 0
    out = capsys.readouterr().out
    assert '# reference setup' in out
    assert '  gamma: 0.7  # heuristic' in out.splitlines()


class TestOracle:
    def test_exact(self):
        assert run_command(['oracle', '--trials', '5']) == 0

    def test_zero_tolerance(self):
        assert run_command(['oracle', '--trials', '2', '--tolerance', '0']) == 3


class TestSocketSession:
    def test_no_edge(self, tmp_path):
        assert run_command(['run-device', '--addr', f'127.0.0.1:{free_port()}', '--output-dir', str(tmp_path),
                            *OVERRIDES, '--override', 'connect_retries=0']) == 4

    def test_bad_address(self, tmp_path):
        assert run_command(['run-device', '--addr', 'localhost', '--output-dir', str(tmp_path), *OVERRIDES]) == 2

    def test_matches_loopback(self, tmp_path):
        self.compare_with_loopback(tmp_path, episodes=1)

    @pytest.mark.slow
    def test_twenty_episodes_match_loopback(self, tmp_path):
        self.compare_with_loopback(tmp_path, episodes=20)

    @staticmethod
    def compare_with_loopback(tmp_path, episodes):
        port = free_port()
        overrides = [*OVERRIDES, '--override', f'episodes={episodes}']
        codes = []
        edge = threading.Thread(target=lambda: codes.append(
            run_command(['serve-edge', '--port', str(port), '--sessions', str(episodes), *overrides])), daemon=True)
        edge.start()
        assert run_command(['run-device', '--addr', f'127.0.0.1:{port}', '--output-dir', str(tmp_path / 'device'),
                            *overrides]) == 0
        edge.join(timeout=60)
        assert codes == [0]
        run_command(['run', '--output-dir', str(tmp_path / 'loopback'), *overrides])
        device_rows = without_run_id(read_csv(tmp_path / 'device' / 'runs.csv'))
        assert len(device_rows) == episodes
        assert device_rows == without_run_id(read_csv(tmp_path / 'loopback' / 'runs.csv'))
