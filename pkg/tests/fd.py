"""Central finite-difference checks for the full training loss.

Selections, argmax/argmin picks and hinge activity are piecewise constant;
a configuration is only used when none of them flips inside the
finite-difference stencil.
"""

import numpy as np
import torch

from rtbpn.language_filter import reduce_and_normalize
from rtbpn.model import RTBPN, RunConfig

PARAM_GROUPS = {
    "embedding": lambda m: [m.encoder.embedding.weight],
    "recurrent": lambda m: list(m.encoder.gru.parameters()),
    "scene_bank": lambda m: list(m.filter.scenes.parameters()),
    "frame_scorer": lambda m: list(m.filter.scorer.parameters()),
    "attention": lambda m: [*m.branch_en.interaction.att_frame.parameters(),
                            *m.branch_en.interaction.att_word.parameters(),
                            *m.branch_en.interaction.att_out.parameters()],
    "cross_gate": lambda m: [*m.branch_en.interaction.visual_gate.parameters(),
                             *m.branch_en.interaction.text_gate.parameters()],
    "conv_stack": lambda m: [*m.branch_en.scorer.conv1.parameters(), *m.branch_en.scorer.conv2.parameters()],
    "score_head": lambda m: list(m.branch_en.scorer.head.parameters()),
}

EPS = 1e-4  # loss roundoff is ~1e-15, small directional derivatives need a wider stencil
SAFETY = 1e-5


def tiny_config(**kw) -> RunConfig:
    base = dict(hidden_dim=6, encoder_hidden=3, embed_dim=4, num_centers=3, T=4, kernel_size=3, pool_stride=1,
                dtype="float64", seed=0)
    base.update(kw)
    return RunConfig(**base)


def random_problem(seed: int, frame_dim: int = 3, vocab: int = 7):
    g = np.random.default_rng(seed)
    cfg = tiny_config(seed=seed, T=int(g.integers(2, 6)))
    torch.manual_seed(seed)
    model = RTBPN(vocab, frame_dim, cfg)
    V = torch.as_tensor(g.normal(size=(int(g.integers(4, 7)), frame_dim)))
    V_neg = torch.as_tensor(g.normal(size=(int(g.integers(4, 7)), frame_dim)))
    tokens = [int(t) for t in g.integers(0, vocab, size=int(g.integers(2, 5)))]
    neg_tokens = [int(t) for t in g.integers(0, vocab, size=int(g.integers(2, 5)))]
    return model, (V, tokens, neg_tokens, V_neg)


def loss_of(model, problem):
    V, tokens, neg_tokens, V_neg = problem
    return model.sample_loss(V, model.encode(tokens), model.encode(neg_tokens), V_neg)


def signature(model, problem):
    """Discrete choices made by one loss evaluation plus the smallest margin to a flip."""
    V, tokens, neg_tokens, V_neg = problem
    lc = model.cfg.loss
    picks, margins = [], []
    with torch.no_grad():
        Q, Qn = model.encode(tokens), model.encode(neg_tokens)
        for vid, q in ((V, Q), (V, Qn), (V_neg, Q)):
            raw = model.filter.scorer(vid, model.filter.scenes(q))
            per, _ = reduce_and_normalize(raw)
            top2 = torch.topk(raw, min(2, raw.shape[1]), dim=1).values
            if raw.shape[1] > 1:
                margins.append(float((top2[:, 0] - top2[:, 1]).min()))
            s = torch.sort(per).values
            margins += [float(s[-1] - s[-2]), float(s[1] - s[0])]
            picks.append((tuple(torch.argmax(raw, 1).tolist()), int(torch.argmax(per)), int(torch.argmin(per))))
        pos = model(V, Q)
        k_en = float(pos["en"].k_sum)
        k_sp = float(pos["sp"].k_sum)
        k_s = float(model.enhanced(V, Qn)[0].k_sum)
        k_v = float(model.enhanced(V_neg, Q)[0].k_sum)
        picks.append((tuple(pos["en"].boundaries), tuple(pos["sp"].boundaries)))
        margins += [abs(lc.margin_intra - k_en + k_sp), abs(lc.margin_inter - k_en + k_s),
                    abs(lc.margin_inter - k_en + k_v)]
    return picks, min(margins)


def directional_check(model, problem, group: str, rng: np.random.Generator, eps: float = EPS):
    """Return (analytic, numeric, rel_err, stable) for a random unit direction in one parameter group."""
    params = PARAM_GROUPS[group](model)
    dirs = [torch.as_tensor(rng.normal(size=tuple(p.shape))) for p in params]
    norm = torch.sqrt(sum((d ** 2).sum() for d in dirs))
    dirs = [d / norm for d in dirs]

    model.zero_grad()
    loss_of(model, problem).total.backward()
    analytic = float(sum((p.grad * d).sum() for p, d in zip(params, dirs) if p.grad is not None))

    base_sig, _ = signature(model, problem)
    values, stable = [], True
    with torch.no_grad():
        for sign in (1, -1):
            for p, d in zip(params, dirs):
                p.add_(sign * eps * d)
            values.append(float(loss_of(model, problem).total))
            stable &= signature(model, problem)[0] == base_sig
            for p, d in zip(params, dirs):
                p.sub_(sign * eps * d)
    numeric = (values[0] - values[1]) / (2 * eps)
    scale = max(abs(analytic), abs(numeric))
    rel = abs(analytic - numeric) / scale if scale > 1e-12 else 0.0
    return analytic, numeric, rel, stable


def usable(model, problem) -> bool:
    _, margin = signature(model, problem)
    return margin > SAFETY
