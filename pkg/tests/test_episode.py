import threading

import numpy as np
import pytest

from covspec.harness.episode import EpisodeSetup, edge_only_baseline, make_edge, run_episode
from covspec.transport.sockets import EdgeServer, Hello, SocketEndpoint, TransportConfig


def comparable(report):
    d = report.to_dict()
    d.pop('wall_clock_s')
    return d


def drafted(report):
    return sum(r.n_draft for r in report.records)


class TestEpisode:
    def test_deterministic(self, small_config):
        config = small_config(seed=3)
        assert comparable(run_episode(config)) == comparable(run_episode(config))

    def test_report(self, small_config):
        report = run_episode(small_config())
        assert len(report.committed_text) == 48
        assert report.rounds == len(report.records) > 0
        report.check_comm()
        positions = report.verified_positions()
        assert positions == sorted(set(positions))
        assert 0.0 <= report.gated_fraction <= 1.0
        assert report.selected_visual_tokens == 16
        assert report.target_decode_tokens == drafted(report) + report.rounds

    def test_identical_models_accept_everything(self, small_config):
        config = small_config('agreement=1.0', 'selection.mode=full', 'gating=false', 'branching=false')
        report = run_episode(config)
        assert report.acceptance_rate == 1.0
        assert report.corrections == 0
        assert report.selected_visual_tokens == 96

    def test_seeds_differ(self, small_config):
        assert run_episode(small_config(seed=0)).committed_text != run_episode(small_config(seed=1)).committed_text

    def test_latency_mode_does_not_change_text(self, small_config):
        modeled = run_episode(small_config())
        wall = run_episode(small_config('latency.mode=wall-clock'))
        assert wall.committed_text == modeled.committed_text
        assert wall.elapsed_s > 0


@pytest.mark.slow
def test_acceptance_grows_with_agreement(small_config):
    def mean_acceptance(agreement):
        return np.mean([run_episode(small_config(f'agreement={agreement}', 'gating=false', seed=seed)).acceptance_rate
                        for seed in range(20)])
    rates = [mean_acceptance(agreement) for agreement in (0.0, 0.25, 0.5, 0.75, 1.0)]
    assert all(a <= b for a, b in zip(rates, rates[1:]))
    assert rates[0] < rates[2] < rates[-1]


class TestCorrection:
    @pytest.mark.parametrize("seed", range(10))
    def test_reference_correction_gives_the_same_text(self, small_config, seed):
        config = small_config(seed=seed)
        decoupled = run_episode(config)
        reference = run_episode(config, reference_correction=True)
        assert reference.committed_text == decoupled.committed_text
        assert reference.rounds == decoupled.rounds

    @pytest.mark.slow
    def test_reference_correction_many_seeds(self, small_config):
        for seed in range(10, 110):
            config = small_config(seed=seed)
            assert run_episode(config, reference_correction=True).committed_text == \
                run_episode(config).committed_text

    def test_full_logits_cost_more(self, small_config):
        config = small_config()
        decoupled = run_episode(config)
        full = run_episode(small_config('decoupled=false'))
        assert full.comm_megabytes > decoupled.comm_megabytes


class TestGating:
    def test_fewer_tokens_go_over_the_air(self, small_config):
        gated_run = [run_episode(small_config('gamma=0.7', seed=seed)) for seed in range(5)]
        ungated_run = [run_episode(small_config('gamma=1.01', seed=seed)) for seed in range(5)]
        assert sum(r.gated_fraction for r in gated_run) > 0
        assert all(r.gated_fraction == 0 for r in ungated_run)
        assert sum(map(drafted, gated_run)) < sum(map(drafted, ungated_run))
        assert sum(r.uplink_bits for r in gated_run) < sum(r.uplink_bits for r in ungated_run)

    def test_fewer_rounds_over_a_seed_set(self, small_config):
        # single seeds can tie
        def total_rounds(gamma):
            return sum(run_episode(small_config(f'gamma={gamma}', 'branching=false', seed=seed)).rounds
                       for seed in range(10))
        assert total_rounds(0.7) < total_rounds(1.01)


class TestBranching:
    @pytest.mark.parametrize("seed", range(3))
    def test_branching_keeps_text_and_saves_time(self, small_config, seed):
        off = run_episode(small_config('branching=false', seed=seed))
        on = run_episode(small_config('branching=true', seed=seed))
        assert on.committed_text == off.committed_text
        assert on.branch_passes > 0
        assert off.critical_passes == on.critical_passes + on.branch_saved
        assert on.idle_s < off.idle_s


def test_edge_only_baseline_has_the_requested_length(small_config):
    config = small_config()
    assert len(edge_only_baseline(config, EpisodeSetup.build(config))) == 48


@pytest.mark.parametrize("seed", [0, 1] + [pytest.param(seed, marks=pytest.mark.slow) for seed in range(2, 20)])
def test_socket_session_matches_loopback(small_config, seed):
    config = small_config('transport.port=0', 'recv_timeout_s=10', seed=seed)
    hello = Hello(vocab_size=config.model.vocab_size, config_hash=config.hello_hash())
    server = EdgeServer(config.transport,
                        lambda idx: (hello, make_edge(config, EpisodeSetup.build(config))))
    thread = threading.Thread(target=server.serve, kwargs={'max_sessions': 1}, daemon=True)
    thread.start()

    def endpoint(timeline, clock):
        return SocketEndpoint(TransportConfig(port=server.port, recv_timeout_s=10.0), hello, timeline,
                              config.payload, config.model.vocab_size, clock=clock)
    over_socket = run_episode(config, endpoint=endpoint)
    thread.join(timeout=10)
    assert comparable(over_socket) == comparable(run_episode(config))
