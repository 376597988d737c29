"""Forward pass: embedding, gated attention, stochastic top-k masking,
attention-weighted aggregation and classification.

One bag flows through as

    H   = act(X W_e^T + b_e)                         instance embeddings
    s_n = w . (tanh(V h_n) * sigm(U h_n))            per-branch scores
    a^raw = softmax(s)                               pre-mask attention
    a   = mask + renormalise (training only)         post-mask attention
    z_i = sum_n a_in h_n                             branch embedding
    z   = sum_n mean_i(a_in) h_n = mean_i z_i        bag embedding

The mean-of-heatmaps and mean-of-branch-embeddings formulations of z are
algebraically identical; the trace asserts that identity to 1e-10.

Masking zeroes each of the k largest attention values independently with
probability p, then divides the survivors by their sum.  It is a train-time
regulariser and is skipped at evaluation unless explicitly enabled.  If a
draw happens to zero every surviving unit of mass the mask is discarded and
the input returned unchanged (a logged degenerate event, reachable only
when k >= N and p is near 1).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .bags import Bag
from .errors import ConfigError
from .model import GatedAttentionParams, Model
from .numerics import relu, require_finite, sigmoid, softmax, stable_argsort_desc
from .rng import Rng

log = logging.getLogger(__name__)

POOLING_MODES = ("max", "mean")


@dataclass
class StkimConfig:
    """Masking intensity: a top-k size (count or bag fraction) and a probability.

    Exactly one of ``count`` / ``fraction`` is set.  ``enabled_at_eval``
    keeps the masking active outside training (off by default; evaluation
    normally removes it).
    """

    count: int | None = 10
    fraction: float | None = None
    prob: float = 0.6
    enabled_at_eval: bool = False

    def __post_init__(self):
        if (self.count is None) == (self.fraction is None):
            raise ConfigError("stkim: set exactly one of count / fraction")
        if self.count is not None and self.count < 0:
            raise ConfigError("stkim: count must be >= 0")
        if self.fraction is not None and not (0.0 < self.fraction <= 1.0):
            raise ConfigError("stkim: fraction must lie in (0, 1]")
        if not (0.0 <= self.prob <= 1.0):
            raise ConfigError("stkim: prob must lie in [0, 1]")

    def resolve_k(self, n: int) -> int:
        """Effective top-k size for a bag of n instances.

        Fractions round half-up and never resolve below 1; either form is
        capped at n.
        """
        if self.count is not None:
            return min(self.count, n)
        return min(max(1, int(np.floor(self.fraction * n + 0.5))), n)

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "fraction": self.fraction,
            "prob": self.prob,
            "enabled_at_eval": self.enabled_at_eval,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StkimConfig":
        count = d.get("count")
        fraction = d.get("fraction")
        if "count" not in d and "fraction" not in d:
            count = 10  # constructor default
        return cls(
            count=count,
            fraction=fraction,
            prob=float(d.get("prob", 0.6)),
            enabled_at_eval=bool(d.get("enabled_at_eval", False)),
        )


@dataclass
class MaskResult:
    attention: np.ndarray
    zeroed: np.ndarray  # bool (N,), True where the value was set to 0
    renormalized: bool  # False when the op was an identity (or fallback)


@dataclass
class BranchTrace:
    raw_attention: np.ndarray  # (N,) pre-mask softmax output
    attention: np.ndarray  # (N,) post-mask, sums to 1
    zeroed: np.ndarray  # bool (N,)
    renormalized: bool
    gate_tanh: np.ndarray  # (N, L)
    gate_sigm: np.ndarray  # (N, L)
    embedding: np.ndarray  # (E,) z_i
    logits: np.ndarray  # (C,)
    probs: np.ndarray  # (C,)


@dataclass
class ForwardTrace:
    """Every intermediate of one bag's forward pass, retained for backward."""

    pre_activations: np.ndarray  # (N, E) before the embedding nonlinearity
    embeddings: np.ndarray  # (N, E)
    branches: list[BranchTrace]
    heatmap: np.ndarray  # (N,) mean of branch attentions
    bag_embedding: np.ndarray  # (E,)
    bag_logits: np.ndarray  # (C,)
    bag_probs: np.ndarray  # (C,)
    masks: list[np.ndarray] = field(default_factory=list)  # zeroed indicators per branch


def _embed(bag: Bag, model: Model) -> tuple[np.ndarray, np.ndarray]:
    if bag.feature_dim != model.dims.feature_dim:
        raise ConfigError(
            f"bag {bag.id!r} has {bag.feature_dim} features, model expects "
            f"{model.dims.feature_dim}"
        )
    pre = bag.instances @ model.embed_w.T + model.embed_b
    h = relu(pre) if model.activation == "relu" else pre
    return pre, h


def embed_instances(bag: Bag, model: Model) -> np.ndarray:
    """(N, E) instance embeddings through the shared linear layer."""
    _, h = _embed(bag, model)
    require_finite(h, "instance embeddings")
    return h


def _gated_scores(embeddings: np.ndarray, branch: GatedAttentionParams):
    t = np.tanh(embeddings @ branch.att_v.T)  # (N, L)
    s = sigmoid(embeddings @ branch.att_u.T)  # (N, L)
    scores = (t * s) @ branch.att_w  # (N,)
    return scores, t, s


def gated_attention(embeddings: np.ndarray, branch: GatedAttentionParams) -> np.ndarray:
    """Softmax-normalised gated attention over the bag's instances."""
    scores, _, _ = _gated_scores(embeddings, branch)
    return softmax(scores)


def stkim_mask(
    attn: np.ndarray,
    cfg: StkimConfig,
    rng: Rng | None,
    training: bool,
    frozen_zeroed: np.ndarray | None = None,
) -> MaskResult:
    """Zero each top-k attention value with probability p, renormalise the rest.

    Identity (bit-exact) when not training and not enabled at eval, or when
    no value ends up zeroed.  ``frozen_zeroed`` replays a recorded mask
    instead of drawing, which the gradient checker uses to keep the
    objective deterministic.
    """
    attn = np.asarray(attn, dtype=np.float64)
    n = attn.shape[0]
    no_mask = np.zeros(n, dtype=bool)
    if not training and not cfg.enabled_at_eval:
        return MaskResult(attn, no_mask, False)

    if frozen_zeroed is not None:
        zeroed = frozen_zeroed.astype(bool)
    else:
        zeroed = no_mask.copy()
        if cfg.prob > 0.0:
            k_eff = cfg.resolve_k(n)
            order = stable_argsort_desc(attn)
            for idx in order[:k_eff]:
                if rng is None:
                    raise ConfigError("stkim_mask needs an rng when masking is active")
                if rng.uniform() < cfg.prob:
                    zeroed[idx] = True

    if not zeroed.any():
        return MaskResult(attn, no_mask, False)
    survivors = attn * ~zeroed
    total = survivors.sum()
    if total == 0.0:
        log.info("stkim: every positive attention value was masked; mask discarded")
        return MaskResult(attn, no_mask, False)
    return MaskResult(survivors / total, zeroed, True)


def aggregate(attn: np.ndarray, embeddings: np.ndarray) -> np.ndarray:
    """Attention-weighted sum of instance embeddings."""
    attn = np.asarray(attn, dtype=np.float64)
    if attn.shape[0] != embeddings.shape[0]:
        raise ValueError("attention length must match the instance count")
    return attn @ embeddings


def average_heatmap(branch_attns: list[np.ndarray]) -> np.ndarray:
    """Elementwise mean of the branch heatmaps; still sums to 1."""
    if len(branch_attns) < 1:
        raise ValueError("average_heatmap needs at least one heatmap")
    return np.mean(np.stack(branch_attns), axis=0)


def _head_forward(head, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    logits = head.weight @ x + head.bias
    return logits, softmax(logits)


def mba_forward(
    bag: Bag,
    model: Model,
    stkim: StkimConfig,
    rng: Rng | None,
    training: bool,
    frozen_masks: list[np.ndarray] | None = None,
) -> ForwardTrace:
    """Full multi-branch forward pass producing a trace for backward.

    Branches draw their masks independently, in branch order, from ``rng``.
    With one branch and masking off this is exactly the classic single-head
    gated-attention pipeline.
    """
    pre, h = _embed(bag, model)
    branch_traces: list[BranchTrace] = []
    for i, (branch, head) in enumerate(zip(model.branches, model.branch_heads)):
        scores, t, s = _gated_scores(h, branch)
        raw = softmax(scores)
        frozen = frozen_masks[i] if frozen_masks is not None else None
        masked = stkim_mask(raw, stkim, rng, training, frozen_zeroed=frozen)
        z_i = aggregate(masked.attention, h)
        logits_i, probs_i = _head_forward(head, z_i)
        branch_traces.append(
            BranchTrace(
                raw_attention=raw,
                attention=masked.attention,
                zeroed=masked.zeroed,
                renormalized=masked.renormalized,
                gate_tanh=t,
                gate_sigm=s,
                embedding=z_i,
                logits=logits_i,
                probs=probs_i,
            )
        )
    heatmap = average_heatmap([bt.attention for bt in branch_traces])
    bag_embedding = aggregate(heatmap, h)
    bag_logits, bag_probs = _head_forward(model.bag_head, bag_embedding)
    require_finite(bag_probs, "bag probabilities")

    mean_branch_embedding = np.mean(np.stack([bt.embedding for bt in branch_traces]), axis=0)
    if np.max(np.abs(bag_embedding - mean_branch_embedding)) > 1e-10:
        raise AssertionError("heatmap-average and branch-mean bag embeddings diverged")

    return ForwardTrace(
        pre_activations=pre,
        embeddings=h,
        branches=branch_traces,
        heatmap=heatmap,
        bag_embedding=bag_embedding,
        bag_logits=bag_logits,
        bag_probs=bag_probs,
        masks=[bt.zeroed for bt in branch_traces],
    )


def pooling_forward(bag: Bag, model: Model, mode: str) -> np.ndarray:
    """Max- or mean-pooling baseline: pooled embedding through the bag head."""
    if mode not in POOLING_MODES:
        raise ConfigError(f"unknown pooling mode {mode!r}; choose from {POOLING_MODES}")
    h = embed_instances(bag, model)
    pooled = h.max(axis=0) if mode == "max" else h.mean(axis=0)
    _, probs = _head_forward(model.bag_head, pooled)
    return probs
