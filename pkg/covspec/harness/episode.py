"""
Episode runner: the edge-only and device-only baselines and the collaborative run, all under
the same seeds and latency model.
"""
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from covspec.common import logger
from covspec.comm.payload import CORRECTED, REJECT, PayloadLedger
from covspec.config import ExperimentConfig
from covspec.engine.device import DeviceDrafter
from covspec.engine.edge import EdgeVerifier
from covspec.harness.metrics import RunReport, cost_reduction, tokens_per_second
from covspec.models import SyntheticModelPair, ModelPair, VisualTokenSet, Query, gen_visual
from covspec.probcore import SeededRng, softmax, sample_with, greedy
from covspec.stop_watch import StopWatch
from covspec.tokensel import query_from_text, select_visual_tokens
from covspec.transport.clock import LinkTimeline, VirtualClock
from covspec.transport.endpoint import DeviceEndpoint
from covspec.transport.loopback import LoopbackEndpoint

EndpointFactory = Callable[[LinkTimeline, VirtualClock], DeviceEndpoint]


@dataclass
class EpisodeSetup:
    models: ModelPair
    visual: VisualTokenSet  # what the edge sees
    draft_visual: VisualTokenSet  # what the device drafts over
    query: Query

    @staticmethod
    def build(config: ExperimentConfig, models: Optional[ModelPair] = None) -> "EpisodeSetup":
        vc = config.visual
        query = query_from_text(vc.query, vc.dim)
        visual = gen_visual(config.seed, vc.num_tokens, vc.dim, vc.num_layers, query,
                            num_planted=vc.num_planted, planted_cos=vc.planted_cos,
                            planted_activity=vc.planted_activity, background_activity=vc.background_activity)
        selected = select_visual_tokens(visual, query, config.selection, seed=config.seed)
        if models is None:
            models = SyntheticModelPair(config.model.vocab_size, config.model.agreement, config.seed)
        return EpisodeSetup(models=models, visual=visual, draft_visual=visual.subset(selected), query=query)

    @property
    def prefill_tokens(self) -> int:
        return self.visual.count + len(self.query)


def autoregressive(step_logits: Callable[[List[int]], np.ndarray], rng: SeededRng,
                   max_new_tokens: int, eos: Optional[int], use_greedy: bool) -> List[int]:
    text: List[int] = []
    while len(text) < max_new_tokens and not (eos is not None and text and text[-1] == eos):
        dist = softmax(step_logits(text))
        text.append(greedy(dist) if use_greedy else sample_with(dist, rng.at(len(text)).uniform()))
    return text


def edge_only_baseline(config: ExperimentConfig, setup: EpisodeSetup) -> List[int]:
    d = config.drafting
    return autoregressive(lambda prefix: setup.models.target_logits(setup.visual, setup.query, prefix),
                          SeededRng(config.seed, 'edge/sample'), d.max_new_tokens, d.eos_token, d.greedy)


def device_only_baseline(config: ExperimentConfig, setup: EpisodeSetup) -> List[int]:
    d = config.drafting
    return autoregressive(lambda prefix: setup.models.draft_logits(setup.draft_visual, setup.query, prefix),
                          SeededRng(config.seed, 'device/draft'), d.max_new_tokens, d.eos_token, d.greedy)


def make_timeline(config: ExperimentConfig, setup: EpisodeSetup) -> LinkTimeline:
    return LinkTimeline(channel=config.channel, edge_round_s=config.latency.edge_round_s,
                        edge_free=setup.visual.count * config.latency.edge_prefill_token_s)


def make_edge(config: ExperimentConfig, setup: EpisodeSetup, reference_correction: bool = False) -> EdgeVerifier:
    return EdgeVerifier(setup.models, setup.visual, setup.query, seed=config.seed,
                        greedy=config.drafting.greedy,
                        reference_draft_visual=setup.draft_visual if reference_correction else None)


def run_collaborative(config: ExperimentConfig, setup: EpisodeSetup, endpoint: DeviceEndpoint) -> DeviceDrafter:
    device = DeviceDrafter(setup.models, setup.draft_visual, setup.query, config.drafting, seed=config.seed,
                           endpoint=endpoint, payload=config.payload, channel=config.channel,
                           device_token_s=config.latency.device_token_s, ledger=PayloadLedger())
    device.run()
    device.ledger.check_totals()
    return device


def run_episode(config: ExperimentConfig,
                reference_correction: bool = False,
                endpoint: Optional[EndpointFactory] = None,
                models: Optional[ModelPair] = None) -> RunReport:
    """
    runs both baselines and the collaborative protocol for one seed

    @param reference_correction: the edge corrects rejections with its own copy of the draft model
    @param endpoint: builds the device endpoint of a socket session; loopback when None
    @param models: replaces the synthetic model pair
    """
    lat = config.latency
    with StopWatch('setup'):
        setup = EpisodeSetup.build(config, models)

    with StopWatch('edge_only') as watch:
        edge_text = edge_only_baseline(config, setup)
    edge_time = (setup.visual.count * lat.edge_prefill_token_s + len(edge_text) * lat.edge_token_s
                 if lat.mode == 'modeled' else watch.elapsed)

    with StopWatch('device_only') as watch:
        device_text = device_only_baseline(config, setup)
    device_time = (setup.draft_visual.count * lat.device_prefill_token_s + len(device_text) * lat.device_token_s
                   if lat.mode == 'modeled' else watch.elapsed)

    timeline = make_timeline(config, setup)
    clock = VirtualClock(start=setup.draft_visual.count * lat.device_prefill_token_s)
    with StopWatch('collaborative') as watch:
        if endpoint is None:
            edge = make_edge(config, setup, reference_correction)
            session = LoopbackEndpoint(edge, timeline, config.payload, config.model.vocab_size, clock=clock)
        else:
            session = endpoint(timeline, clock)
        device = run_collaborative(config, setup, session)
    text = device.committed
    elapsed = clock.now if lat.mode == 'modeled' else watch.elapsed

    ledger = device.ledger
    records = ledger.records
    target_decode = sum(r.n_draft + 1 for r in records)
    tps = tokens_per_second(len(text), elapsed)
    edge_tps = tokens_per_second(len(edge_text), edge_time)
    device_tps = tokens_per_second(len(device_text), device_time)
    report = RunReport(
        committed_text=list(text),
        tokens_per_second=tps,
        speedup_vs_edge_only=tps / edge_tps,
        comm_megabytes=ledger.megabytes,
        cost_reduction_pct=cost_reduction(setup.prefill_tokens, target_decode, len(edge_text),
                                          config.pricing.price_in, config.pricing.price_out),
        acceptance_rate=device.accepted / device.drafted if device.drafted else 1.0,
        rounds=len(records),
        gated_fraction=device.gated / len(text) if text else 0.0,
        edge_only_tps=edge_tps,
        device_only_tps=device_tps,
        device_only_speedup=device_tps / edge_tps,
        elapsed_s=elapsed,
        wall_clock_s=watch.elapsed,
        uplink_bits=ledger.uplink_bits,
        downlink_bits=ledger.downlink_bits,
        gated_bits=ledger.gated_bits,
        overhead_bytes=ledger.overhead_bytes,
        T_comm=ledger.T_comm,
        idle_s=device.idle_s,
        corrections=sum(r.outcome in (REJECT, CORRECTED) for r in records),
        branch_hits=sum(r.branch_hit for r in records),
        branch_saved=device.branch_saved,
        critical_passes=device.critical_passes,
        branch_passes=device.branch_passes,
        target_decode_tokens=target_decode,
        selected_visual_tokens=setup.draft_visual.count,
        records=list(records),
    )
    logger.info(f"seed {config.seed}: {len(text)} tokens in {report.rounds} rounds, "
                f"speedup {report.speedup_vs_edge_only:.3f}, comm {report.comm_megabytes:.4f} MB, "
                f"acceptance {report.acceptance_rate:.3f}, gated {report.gated_fraction:.3f}")
    return report
