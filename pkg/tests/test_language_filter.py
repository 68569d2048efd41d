import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from rtbpn.data import SynthesisConfig, load_split, synthesize_corpus, write_corpus
from rtbpn.language_filter import (FrameSceneScorer, LanguageFilter, SceneBank, VisualOnlyScorer, netvlad_aggregate,
                                   reduce_and_normalize, split_streams)
from rtbpn.text_encoder import TextEncoder

sigmoid = lambda x: 1 / (1 + np.exp(-x))


def rand(*shape, seed=0):
    return torch.randn(*shape, dtype=torch.float64, generator=torch.Generator().manual_seed(seed))


class TestNetVLAD:
    def test_single_center(self):
        Q, c = rand(4, 3), rand(1, 3, seed=1)
        U = netvlad_aggregate(Q, c, rand(1, 3, seed=2), rand(1, seed=3))
        torch.testing.assert_close(U[0], (Q - c[0]).sum(0))

    def test_zero_residual(self):
        c = rand(1, 5)
        U = netvlad_aggregate(c.clone(), c, rand(1, 5, seed=1), rand(1, seed=2))
        assert torch.all(U == 0)

    def test_loop_oracle(self):
        Q, C, W, b = rand(3, 4), rand(2, 4, seed=1), rand(2, 4, seed=2), rand(2, seed=3)
        q, c, w, bb = (t.numpy() for t in (Q, C, W, b))
        expected = np.zeros((2, 4))
        for i in range(3):
            logits = [w[k] @ q[i] + bb[k] for k in range(2)]
            alpha = np.exp(logits) / np.sum(np.exp(logits))
            for j in range(2):
                expected[j] += alpha[j] * (q[i] - c[j])
        np.testing.assert_allclose(netvlad_aggregate(Q, C, W, b).numpy(), expected, atol=1e-12)

    def test_assignments_sum_to_one(self):
        bank = SceneBank(6, 5)
        a = bank.assignments(torch.randn(9, 6))
        torch.testing.assert_close(a.sum(1), torch.ones(9), atol=1e-6, rtol=0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            netvlad_aggregate(rand(3, 4), rand(2, 5), rand(2, 5), rand(2))


class TestFrameScoring:
    def scorer(self, seed=0):
        torch.manual_seed(seed)
        return FrameSceneScorer(3, 4, 5).double()

    def test_zero_params_give_half(self):
        s = self.scorer()
        for p in s.parameters():
            torch.nn.init.zeros_(p)
        beta = s(rand(6, 3), rand(2, 4))
        assert torch.all(beta == 0.5)

    def test_flipping_output_vector(self):
        s = self.scorer()
        V, U = rand(4, 3), rand(3, 4, seed=1)
        beta = s(V, U)
        with torch.no_grad():
            s.out.weight.neg_()
        torch.testing.assert_close(s(V, U), 1 - beta)

    def test_loop_oracle(self):
        s = self.scorer(2)
        V, U = rand(2, 3), rand(2, 4, seed=5)
        W1 = s.frame_proj.weight.detach().numpy()
        W2, b = s.scene_proj.weight.detach().numpy(), s.scene_proj.bias.detach().numpy()
        w = s.out.weight.detach().numpy()[0]
        expected = np.array([[sigmoid(w @ np.tanh(W1 @ V[i].numpy() + W2 @ U[j].numpy() + b)) for j in range(2)]
                             for i in range(2)])
        np.testing.assert_allclose(s(V, U).detach().numpy(), expected, atol=1e-12)


class TestNormalize:
    def test_linear(self):
        raw = torch.tensor([[0.2], [0.5], [0.8]], dtype=torch.float64)
        _, n = reduce_and_normalize(raw)
        torch.testing.assert_close(n, torch.tensor([0.0, 0.5, 1.0], dtype=torch.float64))

    def test_constant(self):
        _, n = reduce_and_normalize(torch.tensor([[0.4], [0.4]]))
        assert n.tolist() == [0.5, 0.5]

    def test_max_over_scenes(self):
        per, n = reduce_and_normalize(torch.tensor([[0.1, 0.9], [0.3, 0.2]]))
        torch.testing.assert_close(per, torch.tensor([0.9, 0.3]))
        assert n.tolist() == [1.0, 0.0]

    def test_tie_gradient_goes_to_lowest_index(self):
        raw = torch.tensor([[0.7, 0.7, 0.1], [0.2, 0.3, 0.3]], requires_grad=True)
        per, _ = reduce_and_normalize(raw)
        per.sum().backward()
        assert raw.grad.tolist() == [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0.001, 0.999), min_size=2, max_size=12), st.integers(0, 11), st.floats(0.0, 0.5))
    def test_range_and_monotonicity(self, values, k, bump):
        x = torch.tensor(values, dtype=torch.float64).unsqueeze(1)
        _, n = reduce_and_normalize(x)
        if x.max() - x.min() > 1e-8:
            assert n.min() == 0.0 and n.max() == 1.0
        k = k % len(values)
        y = x.clone()
        y[k] += bump
        _, m = reduce_and_normalize(y)
        if y.max() - y.min() > 1e-8 and x.max() - x.min() > 1e-8:
            assert m[k] >= n[k] - 1e-12


class TestSplit:
    def test_all_ones(self):
        V = rand(3, 2)
        en, sp = split_streams(V, torch.ones(3, dtype=torch.float64))
        assert torch.equal(en, V) and torch.all(sp == 0)

    def test_half(self):
        V = rand(3, 2)
        en, sp = split_streams(V, torch.full((3,), 0.5, dtype=torch.float64))
        assert torch.equal(en, V / 2) and torch.equal(sp, V / 2)

    def test_selector(self):
        V = rand(2, 4)
        en, sp = split_streams(V, torch.tensor([1.0, 0.0], dtype=torch.float64))
        assert torch.equal(en[0], V[0]) and torch.all(en[1] == 0)
        assert torch.all(sp[0] == 0) and torch.equal(sp[1], V[1])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            split_streams(rand(3, 2), torch.ones(2, dtype=torch.float64))

    def test_reconstruction_64bit(self):
        g = torch.Generator().manual_seed(0)
        for _ in range(50):
            V = torch.randn(7, 5, dtype=torch.float64, generator=g) * 10
            en, sp = split_streams(V, torch.rand(7, dtype=torch.float64, generator=g))
            assert (en + sp - V).abs().max() < 1e-12


class TestVisualOnly:
    def test_zero_params(self):
        s = VisualOnlyScorer(3, 4)
        for p in s.parameters():
            torch.nn.init.zeros_(p)
        assert torch.all(s(torch.randn(5, 3)) == 0.5)

    def test_identical_frames_normalize_to_half(self):
        f = LanguageFilter(3, 4, 5, visual_only=True)
        V = torch.ones(4, 3)
        assert f.relevance(V, torch.randn(2, 4)).tolist() == [0.5] * 4

    def test_loop_oracle(self):
        torch.manual_seed(1)
        s = VisualOnlyScorer(3, 4).double()
        V = rand(4, 3)
        W, b = s.frame_proj.weight.detach().numpy(), s.frame_proj.bias.detach().numpy()
        w = s.out.weight.detach().numpy()[0]
        expected = [sigmoid(w @ np.tanh(W @ v + b)) for v in V.numpy()]
        np.testing.assert_allclose(s(V).detach().numpy(), expected, atol=1e-12)


def test_filter_gradients_match_finite_differences():
    torch.manual_seed(0)
    filt = LanguageFilter(3, 4, 5, num_centers=3).double()
    V, Q, R = rand(6, 3, seed=1), rand(4, 4, seed=2), rand(6, 3, seed=3)
    names = [n for n, _ in filt.named_parameters()]

    def f(*params):
        en, sp = torch.func.functional_call(filt, dict(zip(names, params)), (V, Q))
        return (en * R).sum() - 0.3 * (sp * R).sum()

    params = tuple(p.detach().clone().requires_grad_() for p in filt.parameters())
    assert torch.autograd.gradcheck(f, params, eps=1e-6, atol=1e-7, rtol=1e-4)


def test_zero_signal_auc_is_chance(tmp_path):
    """Untrained filter on a signal-free corpus cannot tell in-span frames apart."""
    write_corpus(synthesize_corpus(SynthesisConfig(num_videos=60, num_val=0, num_test=0, signal_strength=0.0,
                                                   raw_frames_range=(20, 30), feature_dim=8, seed=11)), tmp_path)
    manifest, samples = load_split(tmp_path, "train")
    gts = {e.video_id: e.sentences[0].gt_span_seconds for e in manifest.entries}
    torch.manual_seed(5)
    enc = TextEncoder(manifest.vocab_size, 16, 8).double()
    filt = LanguageFilter(8, 16, 16).double()
    pos, neg = [], []
    with torch.no_grad():
        for s in samples:
            rel = filt.relevance(torch.as_tensor(s.frames.features), enc(s.token_ids)).numpy()
            lo, hi = gts[s.video_id]
            inside = (np.arange(len(rel)) >= lo) & (np.arange(len(rel)) < hi)
            pos.extend(rel[inside])
            neg.extend(rel[~inside])
    assert len(pos) + len(neg) >= 1000
    pos, neg = np.array(pos), np.array(neg)
    auc = ((pos[:, None] > neg[None, :]).mean() + 0.5 * (pos[:, None] == neg[None, :]).mean())
    assert abs(auc - 0.5) <= 0.05
