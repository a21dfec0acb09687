import pytest

from covspec.comm.payload import ACCEPT, REJECT, RoundRecord
from covspec.errors import DegenerateBaseline
from covspec.harness.metrics import (LatencyModel, PricingConfig, RunReport, api_cost, cost_reduction,
                                     tokens_per_second)


def test_api_cost():
    assert api_cost(1_000_000, 0, PricingConfig()) == pytest.approx(0.8)
    assert api_cost(500_000, 500_000, PricingConfig(price_in=1.0, price_out=3.0)) == pytest.approx(2.0)


class TestCostReduction:
    def test_half_the_tokens(self):
        assert cost_reduction(0, 512, 1024, 0.8, 0.8) == pytest.approx(50.0)

    def test_no_savings(self):
        assert cost_reduction(768, 1024, 1024, 0.8, 0.8) == 0.0

    def test_prefill_dilutes_savings(self):
        assert cost_reduction(1024, 0, 1024, 0.8, 0.8) == pytest.approx(50.0)

    def test_degenerate(self):
        with pytest.raises(DegenerateBaseline):
            cost_reduction(0, 0, 0, 0.8, 0.8)

    def test_negative(self):
        with pytest.raises(ValueError):
            cost_reduction(-1, 0, 10, 0.8, 0.8)


def test_tokens_per_second():
    assert tokens_per_second(100, 2.0) == 50.0
    assert tokens_per_second(100, 0.0) == float('inf')


def test_latency_model():
    with pytest.raises(ValueError):
        LatencyModel(mode='fast')
    with pytest.raises(ValueError):
        LatencyModel(edge_round_s=-1.0)


def record(round, S_up, S_down, outcome=ACCEPT, start_pos=0, n_draft=4):
    return RoundRecord(round=round, k=4, start_pos=start_pos, n_draft=n_draft, n_gated=0, n_acc=n_draft,
                       outcome=outcome, S_up=S_up, S_down=S_down, T_up=0.0, T_down=0.0)


def report(records, comm_megabytes, uplink_bits, downlink_bits):
    return RunReport(committed_text=[], tokens_per_second=1.0, speedup_vs_edge_only=1.0,
                     comm_megabytes=comm_megabytes, cost_reduction_pct=0.0, acceptance_rate=1.0,
                     rounds=len(records), gated_fraction=0.0, uplink_bits=uplink_bits,
                     downlink_bits=downlink_bits, records=records)


class TestRunReport:
    records = [record(0, 192, 48), record(1, 192, 144, outcome=REJECT, start_pos=5, n_draft=2)]

    def test_check_comm(self):
        report(self.records, 576 / 8 / 1e6, 384, 192).check_comm()

    def test_check_comm_mismatch(self):
        with pytest.raises(AssertionError):
            report(self.records, 1.0, 384, 192).check_comm()
        with pytest.raises(AssertionError):
            report(self.records, 576 / 8 / 1e6, 380, 192).check_comm()

    def test_verified_positions(self):
        assert report(self.records, 0.0, 0, 0).verified_positions() == [0, 1, 2, 3, 5, 6]

    def test_json(self):
        rep = report(self.records, 576 / 8 / 1e6, 384, 192)
        assert RunReport.from_json(rep.to_json()) == rep
