"""
Report outputs: one CSV row per run, a jsonl detail file with per-round records, and test
fingerprints.
"""
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import csv
import json
import os
import psutil

from covspec.config import ExperimentConfig
from covspec.hash import FAVORITE_PRIME
from covspec.harness.metrics import RunReport
from covspec.stop_watch import get_times

CSV_FIELDS = [
    'run_id', 'seed', 'gamma', 'lambda', 'B_vis', 'k_min', 'k_max', 'F0', 'rho', 'snr_db', 'bandwidth_hz',
    'agreement', 'tps', 'speedup', 'comm_mb', 'cost_red_pct', 'acceptance_rate', 'rounds', 'gated_fraction',
    'vis_red', 'tok_sel', 'm_gate', 'len_adapt', 'branch', 'dvc',
]


def component_flags(config: ExperimentConfig) -> Dict[str, bool]:
    d = config.drafting
    return {
        'vis_red': config.selection.mode != 'full',
        'tok_sel': config.selection.mode == 'covspec',
        'm_gate': d.gating,
        'len_adapt': d.adaptive,
        'branch': d.branching,
        'dvc': d.decoupled,
    }


def csv_row(run_id: str, config: ExperimentConfig, report: RunReport) -> Dict[str, Any]:
    row = {
        'run_id': run_id,
        'seed': config.seed,
        'gamma': config.drafting.gamma,
        'lambda': config.selection.lam,
        'B_vis': config.selection.B_vis,
        'k_min': config.drafting.k_min,
        'k_max': config.drafting.k_max,
        'F0': config.drafting.F0,
        'rho': config.drafting.rho,
        'snr_db': config.channel.snr_db,
        'bandwidth_hz': config.channel.bandwidth_hz,
        'agreement': config.model.agreement,
        'tps': report.tokens_per_second,
        'speedup': report.speedup_vs_edge_only,
        'comm_mb': report.comm_megabytes,
        'cost_red_pct': report.cost_reduction_pct,
        'acceptance_rate': report.acceptance_rate,
        'rounds': report.rounds,
        'gated_fraction': report.gated_fraction,
    }
    row.update({key: int(flag) for key, flag in component_flags(config).items()})
    return row


def baseline_rows(suffix: str, config: ExperimentConfig, report: RunReport) -> List[Dict[str, Any]]:
    """
    edge-only and device-only rows of an ablation table, taken from the baselines of a run
    """
    rows = []
    for name, tps, speedup, cost_red in [('edge-only', report.edge_only_tps, 1.0, 0.0),
                                         ('device-only', report.device_only_tps, report.device_only_speedup, 100.0)]:
        row = csv_row(name + suffix, config, report)
        row.update({'tps': tps, 'speedup': speedup, 'comm_mb': 0.0, 'cost_red_pct': cost_red,
                    'acceptance_rate': '', 'rounds': 0, 'gated_fraction': 0.0})
        row.update({key: 0 for key in component_flags(config)})
        rows.append(row)
    return rows


def write_csv(path: Path, rows: Iterable[Dict[str, Any]]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', encoding='utf-8', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS, extrasaction='ignore', lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_csv(path: Path) -> List[Dict[str, str]]:
    with path.open(encoding='utf-8', newline='') as f:
        return list(csv.DictReader(f))


class StatisticsJSONEncoder(json.JSONEncoder):
    """
    JSON encoder which also handles paths
    """
    def default(self, obj):
        if isinstance(obj, Path):
            return str(obj)
        return json.JSONEncoder.default(self, obj)


class DetailRecorder:
    """
    Writes the jsonl detail file: one parameter record per run, one record per round and one
    results record with machine statistics.
    """
    def __init__(self, file: Optional[Path]):
        self._file = file
        if self._file is not None:
            self._file.parent.mkdir(parents=True, exist_ok=True)
            self._file.write_text("")  # make new empty file

    def _log_record(self, record: dict):
        if self._file is None:
            return
        with self._file.open(mode="a") as f:
            f.write(json.dumps(record, cls=StatisticsJSONEncoder) + "\n")

    def record_parameter(self, run_id: str, config: ExperimentConfig):
        record = config.to_dict()
        record["_type"] = "parameter"
        record["run_id"] = run_id
        record["config_digest"] = config.digest()
        self._log_record(record)

    def record_run(self, run_id: str, report: RunReport):
        for r in report.records:
            record = r.to_dict()
            record["T_comm"] = r.T_comm
            record["_type"] = "round"
            record["run_id"] = run_id
            self._log_record(record)

        record = report.to_dict()
        record.pop("records")
        record["_type"] = "results"
        record["run_id"] = run_id
        mem = psutil.Process(os.getpid()).memory_info()
        record["mem_physical_gb"] = mem.rss / 10**9
        record.update(get_times())
        self._log_record(record)


def text_checksum(text: List[int]) -> int:
    return sum((i + 1) * t for i, t in enumerate(text)) % FAVORITE_PRIME


class FingerPrinter:
    """
    Used to make test fingerprints for scenario regression tests
    """
    def __init__(self, fingerprint_fname: Optional[Path]):
        self.data = []
        self.fname = fingerprint_fname

    @staticmethod
    def round4(x: float) -> str:
        return "{:.4E}".format(x)

    def append(self, point: List[float]):
        self.data.append([self.round4(x) for x in point])

    def append_report(self, report: RunReport):
        self.append([report.tokens_per_second, report.speedup_vs_edge_only, report.comm_megabytes,
                     report.cost_reduction_pct, report.acceptance_rate, report.rounds, report.gated_fraction,
                     len(report.committed_text), text_checksum(report.committed_text)])

    def record(self):
        if self.fname is not None:
            with open(self.fname, 'w') as finger_file:
                print(' '.join(element for point in self.data for element in point), file=finger_file)
