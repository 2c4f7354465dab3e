import math

import numpy as np
import pytest

from stableemit import autodiff as ad
from stableemit import ctc
from stableemit.rng import Rng

from fd import check_grad
from oracles import brute_force_ctc_best_path, brute_force_ctc_nll


def random_lattice_array(rng, n_frames, n_symbols):
    logits = rng.normals((n_frames, n_symbols), 1.5)
    lse = np.log(np.exp(logits - logits.max(axis=1, keepdims=True))
                 .sum(axis=1, keepdims=True)) + logits.max(axis=1, keepdims=True)
    return logits - lse


class TestCtcLoss:
    def test_two_frame_uniform_single_token(self):
        # alphabet {a, blank}, uniform rows: 3 of 4 paths collapse to "a"
        lp = np.log(np.full((2, 2), 0.5))
        lattice = ctc.make_lattice(lp, [0])
        loss = float(ctc.ctc_loss(lattice).value)
        assert loss == pytest.approx(-math.log(3.0 / 4.0), abs=1e-12)

    def test_empty_target_is_all_blank_path(self):
        rng = Rng(1)
        lp = random_lattice_array(rng, 4, 3)
        lattice = ctc.make_lattice(lp, [])
        loss = float(ctc.ctc_loss(lattice).value)
        assert loss == pytest.approx(-lp[:, 2].sum(), abs=1e-9)

    def test_exhaustive_path_oracle(self):
        rng = Rng(2)
        for _ in range(20):
            n_frames = rng.randint(1, 5)
            n_symbols = rng.randint(2, 4)  # includes blank
            n_tokens = rng.randint(0, min(3, n_frames))
            target = [rng.randint(0, n_symbols - 2) for _ in range(n_tokens)]
            # adjacent repeats need a separating blank frame; keep if feasible
            lp = random_lattice_array(rng, n_frames, n_symbols)
            want = brute_force_ctc_nll(lp, target, blank=n_symbols - 1)
            if not np.isfinite(want):
                continue
            lattice = ctc.make_lattice(lp, target)
            got = float(ctc.ctc_loss(lattice).value)
            assert got == pytest.approx(want, abs=1e-6)

    def test_too_many_tokens_rejected(self):
        lp = np.log(np.full((2, 3), 1.0 / 3.0))
        lattice = ctc.make_lattice(lp, [0, 1, 0])
        with pytest.raises(ValueError):
            ctc.ctc_loss(lattice)

    def test_gradient_matches_finite_difference(self):
        rng = Rng(3)
        logits = rng.normals((5, 4), 1.0)

        def build(node):
            m = ad.constant(node.value.max(axis=1, keepdims=True))
            shifted = node - m
            lse = ad.log(ad.reduce_sum(ad.exp(shifted), axis=1, keepdims=True))
            lp = shifted - lse
            lattice = ctc.CtcLattice(log_probs=lp, target=[0, 2], blank=3)
            return ctc.ctc_loss(lattice)

        check_grad(build, logits, rtol=1e-4)

    def test_rejects_blank_in_target(self):
        lp = np.log(np.full((3, 3), 1.0 / 3.0))
        with pytest.raises(ValueError):
            ctc.make_lattice(lp, [2])

    def test_rejects_non_distribution_rows(self):
        with pytest.raises(ValueError):
            ctc.make_lattice(np.zeros((2, 3)), [0])


class TestViterbi:
    def test_deterministic_lattice_recovers_path(self):
        # near one-hot rows spelling blank, a, blank (columns: [a, blank])
        lp = np.log(np.array([
            [0.02, 0.98],
            [0.98, 0.02],
            [0.02, 0.98],
        ]))
        lattice = ctc.make_lattice(lp, [0])
        path = ctc.viterbi_alignment(lattice)
        assert path == [1, 0, 1]  # blank, a, blank

    def test_forced_alignment_structure(self):
        rng = Rng(5)
        lp = random_lattice_array(rng, 3, 3)
        lattice = ctc.make_lattice(lp, [0, 1])
        path = ctc.viterbi_alignment(lattice)
        collapsed = []
        prev = None
        for lab in path:
            if lab != prev and lab != lattice.blank:
                collapsed.append(lab)
            prev = lab
        assert collapsed == [0, 1]

    def test_matches_exhaustive_max(self):
        rng = Rng(6)
        for _ in range(20):
            n_frames = rng.randint(2, 5)
            n_symbols = rng.randint(2, 4)
            n_tokens = rng.randint(1, min(3, n_frames))
            target = [rng.randint(0, n_symbols - 2) for _ in range(n_tokens)]
            lp = random_lattice_array(rng, n_frames, n_symbols)
            want_lp, _ = brute_force_ctc_best_path(lp, target, blank=n_symbols - 1)
            if not np.isfinite(want_lp):
                continue
            lattice = ctc.make_lattice(lp, target)
            path = ctc.viterbi_alignment(lattice)
            got_lp = sum(lp[t, s] for t, s in enumerate(path))
            assert got_lp == pytest.approx(want_lp, abs=1e-9)

    def test_viterbi_never_beats_total(self):
        rng = Rng(7)
        for _ in range(10):
            n_frames = rng.randint(2, 6)
            target = [rng.randint(0, 1) for _ in range(rng.randint(1, 2))]
            lp = random_lattice_array(rng, n_frames, 3)
            if not np.isfinite(brute_force_ctc_nll(lp, target, blank=2)):
                continue  # e.g. adjacent repeat that cannot fit in n_frames
            lattice = ctc.make_lattice(lp, target)
            path = ctc.viterbi_alignment(lattice)
            path_lp = sum(lp[t, s] for t, s in enumerate(path))
            total_lp = -float(ctc.ctc_loss(lattice).value)
            assert path_lp <= total_lp + 1e-9


class TestBoundaries:
    def test_read_off_onsets(self):
        # blank=2: path [blank, a, a, blank, b] -> [2, 5]
        bs = ctc.boundaries_from_alignment([2, 0, 0, 2, 1], [0, 1],
                                           blank=2, frame_ms=40.0)
        assert bs.boundaries == [2, 5]
        assert bs.source == "ctc-viterbi"

    def test_leading_token(self):
        bs = ctc.boundaries_from_alignment([0, 2, 2], [0], blank=2, frame_ms=40.0)
        assert bs.boundaries == [1]

    def test_repeated_token_needs_blank_gap(self):
        bs = ctc.boundaries_from_alignment([0, 2, 0], [0, 0], blank=2, frame_ms=40.0)
        assert bs.boundaries == [1, 3]

    def test_mismatched_path_rejected(self):
        with pytest.raises(ValueError):
            ctc.boundaries_from_alignment([2, 0, 2], [1], blank=2, frame_ms=40.0)

    def test_peak_style(self):
        lp = np.log(np.array([
            [0.2, 0.7, 0.1],
            [0.6, 0.3, 0.1],
            [0.1, 0.1, 0.8],
        ]))
        bs = ctc.boundaries_from_alignment([0, 0, 2], [0], blank=2,
                                           frame_ms=40.0, style="peak",
                                           log_probs=lp)
        assert bs.boundaries == [2]

    def test_strictly_increasing_for_distinct_frames(self):
        bs = ctc.boundaries_from_alignment([0, 1, 0], [0, 1, 0],
                                           blank=2, frame_ms=40.0)
        assert all(b2 > b1 for b1, b2 in zip(bs.boundaries, bs.boundaries[1:]))


class TestBoundarySequenceIO:
    def test_round_trip(self, tmp_path):
        items = [
            ("utt1", ctc.BoundarySequence([2, 5, 9], "ground-truth", 40.0)),
            ("utt2", ctc.BoundarySequence([1, 1, 3], "ctc-viterbi", 40.0)),
        ]
        path = tmp_path / "bounds.jsonl"
        ctc.write_boundaries(path, items)
        got = ctc.read_boundaries(path)
        assert got["utt1"].boundaries == [2, 5, 9]
        assert got["utt2"].source == "ctc-viterbi"
        assert got["utt1"].frame_ms == 40.0

    def test_validation(self):
        with pytest.raises(ValueError):
            ctc.BoundarySequence([3, 2], "ground-truth", 40.0)
        with pytest.raises(ValueError):
            ctc.BoundarySequence([0], "ground-truth", 40.0)
        with pytest.raises(ValueError):
            ctc.BoundarySequence([1], "somewhere", 40.0)
