"""Bottleneck adapters over the FFN sub-block, the layer-weighted feature
bridge, and tuning-mode attachment with parameter accounting.

Two insertion styles exist for the per-layer bottleneck adapter:

* sequential: the adapter consumes the FFN output and adds its normalized
  bottleneck branch back onto it before the usual residual + LN;
* parallel: the adapter consumes the FFN *input*, and its branch is scaled
  by a factor s (fixed or learnable) and summed with the FFN output and the
  residual before the sub-block LN.

Both are exact no-ops at initialization: the up-projection and the branch
LN shift start at zero, so an adapted model reproduces the frozen model
until training moves them.

The bridge (`InterLayerAdapter`) maps the learned convex combination of all
layer outputs into the speaker-embedding width with an FC + ReLU + LN. The
same bridge object exists in every tuning mode so that all modes share one
embedding architecture; modes differ only in which parts may train.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .errors import ConfigError
from .rng import xavier_uniform
from .tensor import Param, Tensor

MODES = (
    "full-finetune",
    "linear-probe",
    "weighted-sum",
    "houlsby",
    "inner",
    "inter",
    "inner-inter",
)
INNER_MODES = ("inner", "inner-inter", "houlsby")
LEARNABLE = "learnable"


@dataclass(frozen=True)
class AdapterConfig:
    """Hyperparameters of the per-layer bottleneck adapters."""

    bottleneck_dim: int = 16
    variant: str = "parallel"  # or "sequential"
    scale: object = 0.5  # a float, or the string "learnable"
    scale_init: float = 1.0

    def __post_init__(self):
        if self.bottleneck_dim < 1:
            raise ConfigError("bottleneck_dim must be positive")
        if self.variant not in ("sequential", "parallel"):
            raise ConfigError(f"unknown adapter variant {self.variant!r}")
        if self.scale != LEARNABLE:
            try:
                object.__setattr__(self, "scale", float(self.scale))
            except (TypeError, ValueError):
                raise ConfigError(f"scale must be a number or {LEARNABLE!r}, got {self.scale!r}")


class BottleneckAdapter:
    """Down-project, ReLU, up-project, LN. Up-projection and LN shift start
    at zero so the branch output is exactly zero at init."""

    def __init__(self, d: int, bottleneck: int, name: str, seed: int,
                 variant: str = "sequential", scale=None):
        if bottleneck >= d:
            raise ConfigError(f"bottleneck {bottleneck} must be smaller than width {d}")
        self.variant = variant
        self.scale = scale  # None (sequential), float, or shared scalar Param
        self.w_down = Param(
            xavier_uniform((d, bottleneck), d, bottleneck, seed, f"{name}.w_down"),
            name=f"{name}.w_down",
        )
        self.b_down = Param(np.zeros(bottleneck), name=f"{name}.b_down")
        self.w_up = Param(np.zeros((bottleneck, d)), name=f"{name}.w_up")
        self.b_up = Param(np.zeros(d), name=f"{name}.b_up")
        self.ln_g = Param(np.ones(d), name=f"{name}.ln.gamma")
        self.ln_b = Param(np.zeros(d), name=f"{name}.ln.beta")

    def branch(self, x: Tensor) -> Tensor:
        """LN(up(relu(down(x)))), the bare bottleneck branch."""
        h = tt.relu(tt.linear(x, self.w_down, self.b_down))
        return tt.layer_norm(tt.linear(h, self.w_up, self.b_up), self.ln_g, self.ln_b)

    def apply_sequential(self, h: Tensor) -> Tensor:
        return inner_sequential(h, self)

    def fuse_ffn(self, u: Tensor, ffn_out: Tensor, ln_gamma, ln_beta) -> Tensor:
        """Fuse this adapter with the FFN sub-block of its host layer."""
        if self.variant == "sequential":
            return tt.layer_norm(
                tt.add(inner_sequential(ffn_out, self), u), ln_gamma, ln_beta
            )
        return fuse_parallel(u, ffn_out, inner_parallel(u, self), self.scale, ln_gamma, ln_beta)

    def params(self):
        return [self.w_down, self.b_down, self.w_up, self.b_up, self.ln_g, self.ln_b]


def inner_sequential(ffn_out: Tensor, adapter: BottleneckAdapter) -> Tensor:
    """Adapter applied after the FFN: its branch reads the FFN output and is
    added back onto it (the residual belongs to the adapter)."""
    return tt.add(ffn_out, adapter.branch(ffn_out))


def inner_parallel(x: Tensor, adapter: BottleneckAdapter) -> Tensor:
    """Parallel branch: reads the FFN input, no internal residual."""
    return adapter.branch(x)


def fuse_parallel(x: Tensor, ffn_out: Tensor, z_p: Tensor, s, ln_gamma, ln_beta) -> Tensor:
    """LN(ffn_out + s * z_p + x): scaled parallel branch summed with the
    frozen FFN branch and the residual, then the sub-block LN. A learnable
    s receives gradient through the scale op."""
    return tt.layer_norm(
        tt.add(tt.add(ffn_out, tt.scale(z_p, s)), x), ln_gamma, ln_beta
    )


def weighted_sum(layer_outputs, layer_logits: Param) -> Tensor:
    """Convex combination of per-layer outputs with softmax(layer_logits)
    weights."""
    if len(layer_outputs) != layer_logits.shape[0]:
        raise ValueError(
            f"weighted_sum: {len(layer_outputs)} layers vs "
            f"{layer_logits.shape[0]} logits"
        )
    return tt.lincomb(tt.softmax(layer_logits), layer_outputs)


class InterLayerAdapter:
    """FC + ReLU + LN bridge from the hidden width to the embedding width,
    applied to the weighted sum of all layer outputs."""

    def __init__(self, d: int, embed_dim: int, seed: int, name: str = "bridge"):
        self.w = Param(
            xavier_uniform((d, embed_dim), d, embed_dim, seed, f"{name}.w"),
            name=f"{name}.w",
        )
        self.b = Param(np.zeros(embed_dim), name=f"{name}.b")
        self.ln_g = Param(np.ones(embed_dim), name=f"{name}.ln.gamma")
        self.ln_b = Param(np.zeros(embed_dim), name=f"{name}.ln.beta")

    def params(self):
        return [self.w, self.b, self.ln_g, self.ln_b]


def inter_layer_forward(h_sum: Tensor, adapter: InterLayerAdapter) -> Tensor:
    """LN(relu(h_sum @ W + b)) row-wise, mapping [T, d] to [T, e]."""
    return tt.layer_norm(
        tt.relu(tt.linear(h_sum, adapter.w, adapter.b)), adapter.ln_g, adapter.ln_b
    )


# ---------------------------------------------------------------------------
# tuning-mode attachment


def attach(model, mode: str, adapter_cfg: AdapterConfig | None = None):
    """Configure a fresh model for a tuning mode: insert bottleneck adapters
    where the mode calls for them and set every trainability flag.

    The backbone is frozen in every mode except full-finetune (where the
    featurizer still stays frozen). The SV head always trains. Layer weights
    train in weighted-sum and inter modes; the bridge trains in inter modes
    only. Attaching twice is an error.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown tuning mode {mode!r}; expected one of {MODES}")
    if getattr(model, "mode", None) is not None:
        raise ConfigError(f"model already attached in mode {model.mode!r}")
    if mode in INNER_MODES:
        adapter_cfg = adapter_cfg or AdapterConfig()
        if mode == "houlsby" and adapter_cfg.variant != "sequential":
            raise ConfigError("the houlsby baseline uses sequential adapters only")
    elif adapter_cfg is not None:
        raise ConfigError(f"mode {mode!r} takes no bottleneck adapter config")

    cfg = model.encoder.cfg
    d, n, seed = cfg.hidden_dim, cfg.num_layers, model.seed

    scale = None
    if mode in ("inner", "inner-inter") and adapter_cfg.variant == "parallel":
        if adapter_cfg.scale == LEARNABLE:
            model.scale_param = Param(
                float(adapter_cfg.scale_init), name="adapters.scale"
            )
            scale = model.scale_param
        else:
            scale = float(adapter_cfg.scale)

    if mode in ("inner", "inner-inter"):
        model.ffn_adapters = [
            BottleneckAdapter(
                d, adapter_cfg.bottleneck_dim, f"adapters.layer{i:02d}.ffn",
                seed, adapter_cfg.variant, scale,
            )
            for i in range(n)
        ]
    elif mode == "houlsby":
        model.ffn_adapters = [
            BottleneckAdapter(
                d, adapter_cfg.bottleneck_dim, f"adapters.layer{i:02d}.ffn",
                seed, "sequential",
            )
            for i in range(n)
        ]
        model.mhsa_adapters = [
            BottleneckAdapter(
                d, adapter_cfg.bottleneck_dim, f"adapters.layer{i:02d}.mhsa",
                seed, "sequential",
            )
            for i in range(n)
        ]

    model.encoder.set_trainable("full-finetune" if mode == "full-finetune" else "frozen")
    model.layer_logits.trainable = mode in ("weighted-sum", "inter", "inner-inter")
    for p in model.bridge.params():
        p.trainable = mode in ("inter", "inner-inter")
    for p in model.head.params():
        p.trainable = True
    model.adapter_cfg = adapter_cfg if mode in INNER_MODES else None
    model.mode = mode
    return model


_COMPONENT_PREFIXES = (
    ("featurizer.", "featurizer"),
    ("encoder.", "backbone"),
    ("adapters.scale", "scale"),
    ("adapters.", "inner_adapters"),
    ("layer_weights.", "layer_weights"),
    ("bridge.", "inter_adapter"),
    ("head.", "sv_backend"),
    ("classifier.", "classifier"),
)


def component_of(name: str) -> str:
    for prefix, comp in _COMPONENT_PREFIXES:
        if name.startswith(prefix):
            return comp
    raise ValueError(f"parameter {name!r} belongs to no known component")


def count_trainable(model) -> dict:
    """Exact trainable-parameter count per component, plus the share of the
    backbone total (featurizer + transformer stack, trainable or not)."""
    counts = {}
    for p in model.named_params(include_classifier=True):
        if p.trainable:
            comp = component_of(p.name)
            counts[comp] = counts.get(comp, 0) + p.data.size
    backbone_total = sum(
        p.data.size for p in model.encoder.params()
    )
    pretrained_side = sum(
        v for k, v in counts.items() if k not in ("sv_backend", "classifier")
    )
    return {
        "components": counts,
        "pretrained_side_trainable": pretrained_side,
        "backbone_total": backbone_total,
        "pct_of_backbone": 100.0 * pretrained_side / backbone_total,
    }
