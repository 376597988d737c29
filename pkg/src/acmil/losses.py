"""Loss terms and the full analytic backward pass.

Three unweighted terms make up the objective for a bag with label y:

    bag loss        -log Yhat[y]
    branch loss     -(1/M) sum_i log Yhat_i[y]
    diversity loss  2/(M(M-1)) sum_{i<j} cos(a_i, a_j)   (0 when M = 1)

Log arguments are clamped at 1e-12; both class losses are the categorical
generalisation of the binary cross entropy and reduce to it at C = 2.  The
diversity term is computed on the post-mask heatmaps.

Chain-rule decomposition used by ``backward`` (g denotes the incoming
gradient of each stage, all per bag):

    softmax + clamped CE   d logits = probs - onehot(y)   (0 if clamped)
    linear head            dW = g x^T,  db = g,  dx = W^T g
    aggregation z = a^T H  da = H g,    dH += a g^T
    heatmap mean           da_i += da / M
    cosine pair            d cos(a_i,a_j)/d a_i = a_j/(|a_i||a_j|)
                                                  - cos * a_i/|a_i|^2
    mask renormalisation   a = (raw * keep)/S, S = sum(raw * keep):
                           d raw = keep * (g - g.a) / S
                           (the 0/1 mask and the top-k selection are
                           constants; gradient flows only through the
                           smooth renormalisation)
    softmax attention      d scores = raw * (g - g.raw)
    gate                   s = w.(T * S) with T = tanh(H V^T),
                           S = sigm(H U^T):
                           dw = (T*S)^T g_s, dG = g_s w^T,
                           dV = (dG*S*(1-T^2))^T H, dU = (dG*T*S*(1-S))^T H,
                           dH += (dG*S*(1-T^2)) V + (dG*T*S*(1-S)) U
    embedding              relu: dPre = dH * 1[pre > 0]; identity: dPre = dH
                           dW_e = dPre^T X, db_e = sum_n dPre

The finite-difference checker in :mod:`acmil.numerics` is the independent
oracle for every line above.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bags import Bag
from .errors import NumericsError
from .mil import ForwardTrace
from .model import Model
from .numerics import cosine_similarity

LOG_CLAMP = 1e-12

Gradients = dict[str, np.ndarray]


@dataclass
class LossBreakdown:
    bag: float
    branch: float
    diversity: float
    total: float


def _clamped_nll(probs: np.ndarray, label: int) -> float:
    return -float(np.log(max(float(probs[label]), LOG_CLAMP)))


def bag_loss(bag_probs: np.ndarray, label: int) -> float:
    """Cross entropy of the bag classifier's probabilities."""
    return _clamped_nll(bag_probs, label)


def branch_loss(branch_probs: list[np.ndarray], label: int) -> float:
    """Mean cross entropy over the per-branch classifier heads."""
    m = len(branch_probs)
    return sum(_clamped_nll(p, label) for p in branch_probs) / m


def diversity_loss(branch_attns: list[np.ndarray]) -> float:
    """Mean pairwise cosine of the branch heatmaps; 0 for a single branch."""
    m = len(branch_attns)
    if m < 2:
        return 0.0
    total = 0.0
    for i in range(m):
        for j in range(i + 1, m):
            total += cosine_similarity(branch_attns[i], branch_attns[j])
    return 2.0 * total / (m * (m - 1))


def total_loss(trace: ForwardTrace, label: int, include_diversity: bool = True) -> LossBreakdown:
    """All three terms from a forward trace; fixed summation order."""
    l_bag = bag_loss(trace.bag_probs, label)
    l_branch = branch_loss([bt.probs for bt in trace.branches], label)
    l_div = diversity_loss([bt.attention for bt in trace.branches]) if include_diversity else 0.0
    return LossBreakdown(l_bag, l_branch, l_div, (l_bag + l_branch) + l_div)


def _ce_dlogits(probs: np.ndarray, label: int) -> np.ndarray:
    # gradient of -log(max(p_y, clamp)) w.r.t. the logits; exactly zero in
    # the (locally constant) clamped regime
    if float(probs[label]) <= LOG_CLAMP:
        return np.zeros_like(probs)
    g = probs.copy()
    g[label] -= 1.0
    return g


def _diversity_attention_grads(attns: list[np.ndarray]) -> list[np.ndarray]:
    m = len(attns)
    grads = [np.zeros_like(a) for a in attns]
    if m < 2:
        return grads
    coef = 2.0 / (m * (m - 1))
    norms = [float(np.linalg.norm(a)) for a in attns]
    for i in range(m):
        for j in range(i + 1, m):
            cij = float(np.dot(attns[i], attns[j]) / (norms[i] * norms[j]))
            grads[i] += coef * (attns[j] / (norms[i] * norms[j]) - cij * attns[i] / norms[i] ** 2)
            grads[j] += coef * (attns[i] / (norms[i] * norms[j]) - cij * attns[j] / norms[j] ** 2)
    return grads


def backward(
    trace: ForwardTrace,
    bag: Bag,
    model: Model,
    masks: list[np.ndarray] | None = None,
    include_diversity: bool = True,
) -> Gradients:
    """Analytic gradients of the total loss for every model parameter.

    ``masks`` replays the zeroed indicators recorded during the forward pass
    (defaults to the ones stored on the trace); they are treated as
    constants, exactly like the trace itself.
    """
    label = bag.label
    m = len(trace.branches)
    h = trace.embeddings
    grads: Gradients = {}

    # bag head
    d_bag_logits = _ce_dlogits(trace.bag_probs, label)
    grads["bag_head_w"] = np.outer(d_bag_logits, trace.bag_embedding)
    grads["bag_head_b"] = d_bag_logits
    dz_bag = model.bag_head.weight.T @ d_bag_logits

    d_heatmap = h @ dz_bag  # (N,)
    dh = np.outer(trace.heatmap, dz_bag)  # accumulates into dL/dH

    d_div = (
        _diversity_attention_grads([bt.attention for bt in trace.branches])
        if include_diversity
        else [np.zeros_like(bt.attention) for bt in trace.branches]
    )

    for i, (bt, branch, head) in enumerate(zip(trace.branches, model.branches, model.branch_heads)):
        d_logits_i = _ce_dlogits(bt.probs, label) / m
        grads[f"branch{i}.head_w"] = np.outer(d_logits_i, bt.embedding)
        grads[f"branch{i}.head_b"] = d_logits_i
        dz_i = head.weight.T @ d_logits_i

        d_attn = h @ dz_i + d_heatmap / m + d_div[i]
        dh += np.outer(bt.attention, dz_i)

        zeroed = masks[i] if masks is not None else bt.zeroed
        if bt.renormalized:
            keep = ~zeroed.astype(bool)
            survivors_sum = float((bt.raw_attention * keep).sum())
            d_raw = keep * (d_attn - float(np.dot(d_attn, bt.attention))) / survivors_sum
        else:
            d_raw = d_attn

        raw = bt.raw_attention
        d_scores = raw * (d_raw - float(np.dot(d_raw, raw)))

        gate = bt.gate_tanh * bt.gate_sigm  # (N, L)
        grads[f"branch{i}.att_w"] = gate.T @ d_scores
        d_gate = np.outer(d_scores, branch.att_w)  # (N, L)
        d_pre_t = d_gate * bt.gate_sigm * (1.0 - bt.gate_tanh**2)
        d_pre_s = d_gate * bt.gate_tanh * bt.gate_sigm * (1.0 - bt.gate_sigm)
        grads[f"branch{i}.att_v"] = d_pre_t.T @ h
        grads[f"branch{i}.att_u"] = d_pre_s.T @ h
        dh += d_pre_t @ branch.att_v + d_pre_s @ branch.att_u

    if model.activation == "relu":
        d_pre = dh * (trace.pre_activations > 0.0)
    else:
        d_pre = dh
    grads["embed_w"] = d_pre.T @ bag.instances
    grads["embed_b"] = d_pre.sum(axis=0)

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for parameter {name}")
    return grads
