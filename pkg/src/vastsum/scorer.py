"""Hierarchical segment-context scoring network.

Frame features are projected and position-embedded, pooled into one token per
change-point segment, contextualized by a pre-norm transformer over the M
segment tokens, gated back into the frames, and refined by a residual stack
of depthwise-separable temporal convolutions. All functions build onto the
caller's tape; parameters arrive as a name -> Node mapping.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import diffcore as dc
from .config import ScorerConfig
from .errors import CapacityError
from .timeline import SegmentIndexMap


def param_shapes(cfg: ScorerConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every learnable tensor of the scorer."""
    d, dh = cfg.model_dim, cfg.head_dim
    shapes: dict[str, tuple[int, ...]] = {
        "input.proj.w": (cfg.input_dim, d),
        "input.proj.b": (d,),
        "input.norm.gain": (d,),
        "input.norm.bias": (d,),
        "pos.table": (cfg.max_timesteps, d),
    }
    for i in range(cfg.layers):
        shapes[f"seg{i}.norm1.gain"] = (d,)
        shapes[f"seg{i}.norm1.bias"] = (d,)
        for h in range(cfg.heads):
            shapes[f"seg{i}.head{h}.wq"] = (d, dh)
            shapes[f"seg{i}.head{h}.wk"] = (d, dh)
            shapes[f"seg{i}.head{h}.wv"] = (d, dh)
        shapes[f"seg{i}.attn.wo"] = (d, d)
        shapes[f"seg{i}.norm2.gain"] = (d,)
        shapes[f"seg{i}.norm2.bias"] = (d,)
        shapes[f"seg{i}.ffn.w1"] = (d, cfg.ffn_mult * d)
        shapes[f"seg{i}.ffn.b1"] = (cfg.ffn_mult * d,)
        shapes[f"seg{i}.ffn.w2"] = (cfg.ffn_mult * d, d)
        shapes[f"seg{i}.ffn.b2"] = (d,)
    shapes["fusion.gate.w"] = (2 * d, d)
    shapes["fusion.gate.b"] = (d,)
    shapes["fusion.norm.gain"] = (d,)
    shapes["fusion.norm.bias"] = (d,)
    for j in range(cfg.refine_blocks):
        shapes[f"refine{j}.depthwise"] = (d, cfg.kernel)
        shapes[f"refine{j}.pointwise.w"] = (d, d)
        shapes[f"refine{j}.pointwise.b"] = (d,)
    return shapes


def init_params(cfg: ScorerConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Scaled-uniform fan-in init for matrices; zeros for biases and positions;
    unit gains for the layer norms."""
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg).items():
        if name == "pos.table" or name.endswith((".b", ".bias", ".b1", ".b2")):
            params[name] = np.zeros(shape)
        elif name.endswith(".gain"):
            params[name] = np.ones(shape)
        elif name.endswith(".depthwise"):
            bound = 1.0 / np.sqrt(shape[1])
            params[name] = rng.uniform(-bound, bound, shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, shape)
    return params


def _affine_norm(x: dc.Node, params: Mapping[str, dc.Node], prefix: str) -> dc.Node:
    return dc.add(dc.multiply(dc.layer_norm(x), params[f"{prefix}.gain"]), params[f"{prefix}.bias"])


def project_and_embed(x: dc.Node, params: Mapping[str, dc.Node], cfg: ScorerConfig) -> dc.Node:
    """LN(W x + b) + positional row, per timestep."""
    t_len = x.value.shape[0]
    if t_len > cfg.max_timesteps:
        raise CapacityError(
            f"sequence length {t_len} exceeds positional table size {cfg.max_timesteps}"
        )
    h = dc.add(dc.matmul(x, params["input.proj.w"]), params["input.proj.b"])
    h = _affine_norm(h, params, "input.norm")
    pos = dc.gather_rows(params["pos.table"], range(t_len))
    return dc.add(h, pos)


def segment_tokenize(h0: dc.Node, seg: SegmentIndexMap) -> dc.Node:
    """One token per segment: mean of its projected frame tokens (zeros if empty)."""
    return dc.mean_over_sets(h0, seg.index_sets)


def _mha(z_norm: dc.Node, params: Mapping[str, dc.Node], cfg: ScorerConfig, i: int) -> dc.Node:
    heads = []
    inv_sqrt_dh = 1.0 / np.sqrt(cfg.head_dim)
    for h in range(cfg.heads):
        q = dc.matmul(z_norm, params[f"seg{i}.head{h}.wq"])
        k = dc.matmul(z_norm, params[f"seg{i}.head{h}.wk"])
        v = dc.matmul(z_norm, params[f"seg{i}.head{h}.wv"])
        attn = dc.softmax_rows(dc.scale(dc.matmul(q, k, transpose_b=True), inv_sqrt_dh))
        heads.append(dc.matmul(attn, v))
    merged = heads[0] if len(heads) == 1 else dc.concat_last(heads)
    return dc.matmul(merged, params[f"seg{i}.attn.wo"])


def segment_transformer(z0: dc.Node, params: Mapping[str, dc.Node], cfg: ScorerConfig) -> dc.Node:
    """Pre-norm encoder stack over the M segment tokens."""
    z = z0
    for i in range(cfg.layers):
        u = dc.add(z, _mha(_affine_norm(z, params, f"seg{i}.norm1"), params, cfg, i))
        un = _affine_norm(u, params, f"seg{i}.norm2")
        hidden = dc.gelu(dc.add(dc.matmul(un, params[f"seg{i}.ffn.w1"]), params[f"seg{i}.ffn.b1"]))
        ffn = dc.add(dc.matmul(hidden, params[f"seg{i}.ffn.w2"]), params[f"seg{i}.ffn.b2"])
        z = dc.add(u, ffn)
    return z


def gated_fusion(
    h0: dc.Node, context: dc.Node, seg: SegmentIndexMap, params: Mapping[str, dc.Node]
) -> dc.Node:
    """Inject each frame's segment context through a sigmoid gate, then normalize."""
    g = dc.gather_rows(context, seg.segment_ids)
    gate_in = dc.concat_last([h0, g])
    alpha = dc.sigmoid(dc.add(dc.matmul(gate_in, params["fusion.gate.w"]), params["fusion.gate.b"]))
    fused = dc.add(h0, dc.multiply(alpha, g))
    return _affine_norm(fused, params, "fusion.norm")


def temporal_refine(h: dc.Node, params: Mapping[str, dc.Node], cfg: ScorerConfig) -> dc.Node:
    """Residual stack: depthwise temporal conv -> GELU -> pointwise mixing, repeated."""
    psi = h
    for j in range(cfg.refine_blocks):
        psi = dc.pointwise_conv1d(
            dc.gelu(dc.depthwise_conv1d(psi, params[f"refine{j}.depthwise"])),
            params[f"refine{j}.pointwise.w"],
            params[f"refine{j}.pointwise.b"],
        )
    return dc.add(h, psi)


def forward(
    x: dc.Node, seg: SegmentIndexMap, params: Mapping[str, dc.Node], cfg: ScorerConfig
) -> dc.Node:
    """Full scorer: T x D features to T x d refined frame tokens."""
    h0 = project_and_embed(x, params, cfg)
    context = segment_transformer(segment_tokenize(h0, seg), params, cfg)
    fused = gated_fusion(h0, context, seg, params)
    return temporal_refine(fused, params, cfg)
