"""Model parameters, initialisation and the text checkpoint format.

The learnable pieces are one embedding layer, M gated-attention branches
(each with its own linear classifier head) and one bag-level classifier
head.  Branch heads share nothing with each other or with the bag head.

Weights initialise uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)),
biases zero, drawn in ``parameters()`` order from the run seed, so a model
is a pure function of (dims, activation, seed).

Checkpoints are JSON with every float at 17 significant digits; the
round-trip is bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import jsonio
from .errors import ConfigError, DataFormatError
from .rng import Rng

ACTIVATIONS = ("relu", "identity")
CHECKPOINT_FORMAT = "acmil-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelDims:
    feature_dim: int
    embed_dim: int
    attn_dim: int
    branches: int
    classes: int

    def __post_init__(self):
        for name in ("feature_dim", "embed_dim", "attn_dim", "branches", "classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"dims.{name} must be >= 1")
        if self.classes < 2:
            raise ConfigError("dims.classes must be >= 2")


@dataclass
class GatedAttentionParams:
    """One attention branch: tanh path, sigmoid gate path and score vector."""

    att_v: np.ndarray  # (L, E) tanh path
    att_u: np.ndarray  # (L, E) sigmoid gate path
    att_w: np.ndarray  # (L,) score weights


@dataclass
class LinearHead:
    weight: np.ndarray  # (C, E)
    bias: np.ndarray  # (C,)


@dataclass
class Model:
    dims: ModelDims
    activation: str
    embed_w: np.ndarray  # (E, D)
    embed_b: np.ndarray  # (E,)
    branches: list[GatedAttentionParams]
    branch_heads: list[LinearHead]
    bag_head: LinearHead
    seed: int = field(default=0)

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """All trainable tensors in a fixed, documented order."""
        out = [("embed_w", self.embed_w), ("embed_b", self.embed_b)]
        for i, (br, head) in enumerate(zip(self.branches, self.branch_heads)):
            out.append((f"branch{i}.att_v", br.att_v))
            out.append((f"branch{i}.att_u", br.att_u))
            out.append((f"branch{i}.att_w", br.att_w))
            out.append((f"branch{i}.head_w", head.weight))
            out.append((f"branch{i}.head_b", head.bias))
        out.append(("bag_head_w", self.bag_head.weight))
        out.append(("bag_head_b", self.bag_head.bias))
        return out

    def copy(self) -> "Model":
        return Model(
            dims=self.dims,
            activation=self.activation,
            embed_w=self.embed_w.copy(),
            embed_b=self.embed_b.copy(),
            branches=[
                GatedAttentionParams(b.att_v.copy(), b.att_u.copy(), b.att_w.copy())
                for b in self.branches
            ],
            branch_heads=[LinearHead(h.weight.copy(), h.bias.copy()) for h in self.branch_heads],
            bag_head=LinearHead(self.bag_head.weight.copy(), self.bag_head.bias.copy()),
            seed=self.seed,
        )


def _uniform_fan(rng: Rng, rows: int, cols: int) -> np.ndarray:
    s = np.sqrt(6.0 / (rows + cols))
    return rng.uniform_array((rows, cols), -s, s)


def init_model(dims: ModelDims, rng: Rng, activation: str = "relu", seed: int = 0) -> Model:
    """Fresh model with fan-balanced uniform weights and zero biases."""
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}; choose from {ACTIVATIONS}")
    d, e, l, m, c = dims.feature_dim, dims.embed_dim, dims.attn_dim, dims.branches, dims.classes
    embed_w = _uniform_fan(rng, e, d)
    embed_b = np.zeros(e)
    branches = []
    heads = []
    for _ in range(m):
        att_v = _uniform_fan(rng, l, e)
        att_u = _uniform_fan(rng, l, e)
        att_w = _uniform_fan(rng, l, 1).reshape(l)
        branches.append(GatedAttentionParams(att_v, att_u, att_w))
        heads.append(LinearHead(_uniform_fan(rng, c, e), np.zeros(c)))
    bag_head = LinearHead(_uniform_fan(rng, c, e), np.zeros(c))
    return Model(dims, activation, embed_w, embed_b, branches, heads, bag_head, seed=seed)


def save_checkpoint(model: Model, path, config: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "dims": {
            "feature_dim": model.dims.feature_dim,
            "embed_dim": model.dims.embed_dim,
            "attn_dim": model.dims.attn_dim,
            "branches": model.dims.branches,
            "classes": model.dims.classes,
        },
        "activation": model.activation,
        "seed": model.seed,
        "config": config if config is not None else {},
        "params": {name: arr for name, arr in model.parameters()},
    }
    jsonio.dump(doc, path)


def load_checkpoint(path) -> tuple[Model, dict]:
    doc = jsonio.load(path)
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise DataFormatError(f"{path}: not a checkpoint file")
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version")
    dd = doc["dims"]
    dims = ModelDims(
        feature_dim=int(dd["feature_dim"]),
        embed_dim=int(dd["embed_dim"]),
        attn_dim=int(dd["attn_dim"]),
        branches=int(dd["branches"]),
        classes=int(dd["classes"]),
    )
    params = doc["params"]

    def arr(name, shape):
        if name not in params:
            raise DataFormatError(f"{path}: missing parameter {name}")
        a = np.asarray(params[name], dtype=np.float64)
        if a.shape != shape:
            raise DataFormatError(f"{path}: parameter {name} has shape {a.shape}, want {shape}")
        if not np.all(np.isfinite(a)):
            raise DataFormatError(f"{path}: parameter {name} contains non-finite values")
        return a

    d, e, l, m, c = dims.feature_dim, dims.embed_dim, dims.attn_dim, dims.branches, dims.classes
    branches = []
    heads = []
    for i in range(m):
        branches.append(
            GatedAttentionParams(
                arr(f"branch{i}.att_v", (l, e)),
                arr(f"branch{i}.att_u", (l, e)),
                arr(f"branch{i}.att_w", (l,)),
            )
        )
        heads.append(LinearHead(arr(f"branch{i}.head_w", (c, e)), arr(f"branch{i}.head_b", (c,))))
    model = Model(
        dims=dims,
        activation=str(doc["activation"]),
        embed_w=arr("embed_w", (e, d)),
        embed_b=arr("embed_b", (e,)),
        branches=branches,
        branch_heads=heads,
        bag_head=LinearHead(arr("bag_head_w", (c, e)), arr("bag_head_b", (c,))),
        seed=int(doc.get("seed", 0)),
    )
    if model.activation not in ACTIVATIONS:
        raise DataFormatError(f"{path}: unknown activation {model.activation!r}")
    return model, doc.get("config", {})
