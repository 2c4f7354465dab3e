import numpy as np
import pytest

from stableemit import data as ds
from stableemit import decoder as dec
from stableemit import model as md
from stableemit.rng import Rng


def biased_model(r_offset, favored_token=2, vocab=4, d=8):
    """Zero projections: p = sigmoid(r_offset) everywhere, fixed argmax."""
    cfg = md.ModelConfig(input_dim=3, hidden_dim=d, vocab_size=vocab,
                         encoder_layers=1, chunk_width=2, noise_std=0.0, seed=0)
    params = {k: np.zeros_like(v) for k, v in md.init_parameters(cfg).items()}
    params["mono.v"] = np.ones(d)
    params["mono.g"] = np.asarray(1.0)
    params["mono.r"] = np.asarray(float(r_offset))
    params["chunk.v"] = np.ones(d)
    bias = np.zeros(cfg.n_classes)
    bias[favored_token] = 5.0
    params["out.bo"] = bias
    return md.Seq2SeqModel(cfg, params=params)


def features(n, dim=3, seed=1):
    return Rng(seed).normals((n, dim))


class TestGreedyDecode:
    def test_immediate_emission_when_p_high(self):
        m = biased_model(r_offset=4.0)  # p ~ 0.98 every frame
        emissions, reason = dec.greedy_streaming_decode(
            m, features(6), dec.DecodeConfig(max_tokens=3))
        assert emissions[0].frame == 1
        assert emissions[0].token == 2
        assert emissions[0].p >= 0.5
        assert reason == "max-tokens"

    def test_no_emissions_below_threshold(self):
        m = biased_model(r_offset=-4.0)  # p ~ 0.018 everywhere
        emissions, reason = dec.greedy_streaming_decode(m, features(6))
        assert emissions == []
        assert reason == "no-boundary"

    def test_eos_token_stops_decoding(self):
        # favored token = eos stops decoding immediately with no emissions
        m = biased_model(r_offset=4.0, favored_token=md.EOS_ID)
        emissions, reason = dec.greedy_streaming_decode(m, features(6))
        assert emissions == []
        assert reason == "eos"

    def test_max_lookahead_caps_scan(self):
        m = biased_model(r_offset=-4.0)
        config = dec.DecodeConfig(max_lookahead=3)
        emissions, reason = dec.greedy_streaming_decode(m, features(10), config)
        assert emissions == []
        assert reason == "no-boundary"

    def test_boundaries_non_decreasing(self, toy_setup):
        model, corpus, _ = toy_setup
        for utt in corpus[:20]:
            emissions, _ = dec.greedy_streaming_decode(model, utt.features)
            frames = [e.frame for e in emissions]
            assert frames == sorted(frames)
            for e in emissions:
                assert e.p >= 0.5

    def test_threshold_monotonicity_on_trained_model(self, toy_setup):
        model, corpus, _ = toy_setup
        compared = 0
        for utt in corpus[:20]:
            high, _ = dec.greedy_streaming_decode(
                model, utt.features, dec.DecodeConfig(tau=0.5))
            low, _ = dec.greedy_streaming_decode(
                model, utt.features, dec.DecodeConfig(tau=0.1))
            for eh, el in zip(high, low):
                assert el.frame <= eh.frame
                compared += 1
        assert compared > 10

    def test_discount_at_test_is_reparameterized_threshold(self, toy_setup):
        model, corpus, _ = toy_setup
        lam = 0.3
        for utt in corpus[:10]:
            discounted, _ = dec.greedy_streaming_decode(
                model, utt.features,
                dec.DecodeConfig(tau=0.5, discount_at_test=True, lambda_se=lam))
            rescaled, _ = dec.greedy_streaming_decode(
                model, utt.features, dec.DecodeConfig(tau=0.5 / (1 - lam)))
            assert [(e.token, e.frame, e.index) for e in discounted] == \
                [(e.token, e.frame, e.index) for e in rescaled]
            for d_rec, r_rec in zip(discounted, rescaled):
                assert d_rec.p == pytest.approx((1 - lam) * r_rec.p)

    def test_decode_config_validation(self):
        with pytest.raises(ValueError):
            dec.DecodeConfig(tau=0.0).validate()
        with pytest.raises(ValueError):
            dec.DecodeConfig(max_tokens=0).validate()
        with pytest.raises(ValueError):
            dec.DecodeConfig(discount_at_test=True, lambda_se=1.0).validate()


class TestIncrementalSession:
    def test_frame_at_a_time_matches_offline(self, toy_setup):
        model, corpus, _ = toy_setup
        for utt in corpus[:10]:
            offline, reason_off = dec.greedy_streaming_decode(model, utt.features)
            session = dec.IncrementalSession(model)
            for t in range(utt.features.shape[0]):
                session.push_frames(utt.features[t:t + 1])
            session.close()
            assert session.emissions == offline
            assert session.termination == reason_off

    def test_empty_utterance(self):
        m = biased_model(r_offset=4.0)
        session = dec.IncrementalSession(m)
        session.push_frames(np.zeros((0, 3)))
        session.close()
        assert session.emissions == []
        assert session.termination == "no-boundary"

    def test_random_chunkings_match(self, toy_setup):
        model, corpus, _ = toy_setup
        utt = corpus[3]
        offline, _ = dec.greedy_streaming_decode(model, utt.features)
        rng = Rng(17)
        for _ in range(5):
            session = dec.IncrementalSession(model)
            pos = 0
            while pos < utt.features.shape[0]:
                size = rng.randint(1, 4)
                session.push_frames(utt.features[pos:pos + size])
                pos += size
            session.close()
            assert session.emissions == offline

    def test_push_after_close_rejected(self):
        session = dec.IncrementalSession(biased_model(4.0))
        session.push_frames(features(2))
        session.close()
        with pytest.raises(RuntimeError):
            session.push_frames(features(1))

    def test_close_idempotent(self):
        session = dec.IncrementalSession(biased_model(-4.0))
        session.push_frames(features(3))
        session.close()
        reason = session.termination
        assert session.close() == []
        assert session.termination == reason


class TestEmissionIO:
    def test_round_trip(self, tmp_path):
        per_utt = [
            ("u1", [dec.EmissionRecord(token=2, frame=3, p=0.7, index=1),
                    dec.EmissionRecord(token=4, frame=5, p=0.9, index=2)]),
            ("u2", []),
        ]
        path = tmp_path / "emissions.jsonl"
        dec.write_emissions(path, per_utt)
        loaded = dec.read_emissions(path)
        assert loaded["u1"] == per_utt[0][1]
        assert "u2" not in loaded  # no emissions, no lines
