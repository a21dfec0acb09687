"""
Run metrics: modeled latencies, API pricing and the per-run report.
"""
from dataclasses import dataclass, field
from typing import List

from dataclasses_json import dataclass_json

from covspec.comm.payload import RoundRecord
from covspec.errors import DegenerateBaseline

LATENCY_MODES = ('modeled', 'wall-clock')


@dataclass_json
@dataclass
class LatencyModel:
    mode: str = 'modeled'  # modeled | wall-clock
    device_token_s: float = 0.02  # draft forward pass
    edge_round_s: float = 0.12  # one verification round on the edge
    edge_token_s: float = 0.07  # one autoregressive target step (edge-only baseline)
    device_prefill_token_s: float = 0.0005  # per visual token the draft model sees
    edge_prefill_token_s: float = 0.0001  # per visual token the target model sees

    def __post_init__(self):
        if self.mode not in LATENCY_MODES:
            raise ValueError(f"unknown latency mode {self.mode}, expected one of {LATENCY_MODES}")
        for name in ('device_token_s', 'edge_round_s', 'edge_token_s', 'device_prefill_token_s',
                     'edge_prefill_token_s'):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")


@dataclass_json
@dataclass
class PricingConfig:
    price_in: float = 0.8  # dollars per million input tokens
    price_out: float = 0.8  # dollars per million output tokens


def api_cost(input_tokens: int, output_tokens: int, pricing: PricingConfig) -> float:
    return (input_tokens * pricing.price_in + output_tokens * pricing.price_out) / 1e6


def cost_reduction(prefill_tokens: int, decode_tokens_target_side: int, baseline_tokens: int,
                   price_in: float, price_out: float) -> float:
    """
    percent saved against edge-only decoding of baseline_tokens after the same prefill;
    the draft model runs on the device and costs nothing
    """
    if min(prefill_tokens, decode_tokens_target_side, baseline_tokens) < 0:
        raise ValueError("token counts must be nonnegative")
    pricing = PricingConfig(price_in=price_in, price_out=price_out)
    baseline = api_cost(prefill_tokens, baseline_tokens, pricing)
    if baseline <= 0:
        raise DegenerateBaseline("the edge-only baseline costs nothing")
    cost = api_cost(prefill_tokens, decode_tokens_target_side, pricing)
    return 100.0 * (baseline - cost) / baseline


def tokens_per_second(n_tokens: int, seconds: float) -> float:
    return n_tokens / seconds if seconds > 0 else float('inf')


@dataclass_json
@dataclass
class RunReport:
    committed_text: List[int]
    tokens_per_second: float
    speedup_vs_edge_only: float
    comm_megabytes: float
    cost_reduction_pct: float
    acceptance_rate: float
    rounds: int
    gated_fraction: float

    edge_only_tps: float = 0.0
    device_only_tps: float = 0.0
    device_only_speedup: float = 0.0
    elapsed_s: float = 0.0  # modeled or wall-clock, per the latency mode
    wall_clock_s: float = 0.0
    uplink_bits: int = 0
    downlink_bits: int = 0
    gated_bits: int = 0
    overhead_bytes: int = 0
    T_comm: float = 0.0
    idle_s: float = 0.0
    corrections: int = 0
    branch_hits: int = 0
    branch_saved: int = 0
    critical_passes: int = 0
    branch_passes: int = 0
    target_decode_tokens: int = 0
    selected_visual_tokens: int = 0
    records: List[RoundRecord] = field(default_factory=list)

    def verified_positions(self) -> List[int]:
        """
        absolute positions shipped for verification, in order
        """
        return [pos for r in self.records for pos in range(r.start_pos, r.start_pos + r.n_draft)]

    def check_comm(self):
        total = sum(r.S_up + r.S_down for r in self.records)
        if total / 8 / 1e6 != self.comm_megabytes or total != self.uplink_bits + self.downlink_bits:
            raise AssertionError(f"report carries {self.comm_megabytes} MB, the rounds add up to {total} bits")
