"""Variational frame-importance head.

A diagonal Gaussian posterior over a per-frame latent, sampled with the
reparameterization trick during training (posterior mean at inference, i.e.
zero noise), feeding a small MLP that emits an importance logit and an
observation log-variance per timestep. Log-variances are clamped to keep the
heteroscedastic likelihood well-behaved.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import diffcore as dc
from .config import HeadConfig, ScorerConfig
from .errors import ConfigError

LOGVAR_MIN = -10.0
LOGVAR_MAX = 5.0


@dataclass
class ImportanceOutput:
    """Per-timestep head outputs, all tape nodes."""

    mu: dc.Node
    log_v: dc.Node
    mu_z: dc.Node
    log_var_z: dc.Node
    z: dc.Node


def param_shapes(scorer_cfg: ScorerConfig, head_cfg: HeadConfig) -> dict[str, tuple[int, ...]]:
    d = scorer_cfg.model_dim
    dz = head_cfg.latent_dim
    hidden = head_cfg.hidden_dim if head_cfg.hidden_dim is not None else d
    return {
        "head.latent_mu.w": (d, dz),
        "head.latent_mu.b": (dz,),
        "head.latent_logvar.w": (d, dz),
        "head.latent_logvar.b": (dz,),
        "head.mlp.w": (d + dz, hidden),
        "head.mlp.b": (hidden,),
        "head.mu.w": (hidden,),
        "head.mu.b": (1,),
        "head.logv.w": (hidden,),
        "head.logv.b": (1,),
    }


def init_params(
    scorer_cfg: ScorerConfig, head_cfg: HeadConfig, rng: np.random.Generator
) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(scorer_cfg, head_cfg).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, shape)
    return params


def posterior_params(
    h_hat: dc.Node, params: Mapping[str, dc.Node]
) -> tuple[dc.Node, dc.Node]:
    """Latent posterior mean and clamped log-variance from the refined tokens."""
    mu_z = dc.add(dc.matmul(h_hat, params["head.latent_mu.w"]), params["head.latent_mu.b"])
    raw = dc.add(dc.matmul(h_hat, params["head.latent_logvar.w"]), params["head.latent_logvar.b"])
    return mu_z, dc.clip(raw, LOGVAR_MIN, LOGVAR_MAX)


def sample_latent(mu_z: dc.Node, log_var_z: dc.Node, noise: np.ndarray) -> dc.Node:
    """Reparameterized draw z = mu + exp(log_var / 2) * noise (zero noise = mean)."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != mu_z.value.shape:
        raise ValueError(f"noise shape {noise.shape} does not match {mu_z.value.shape}")
    sigma = dc.exp(dc.scale(log_var_z, 0.5))
    return dc.add(mu_z, dc.multiply(sigma, mu_z.tape.constant(noise)))


def importance_params(
    h_hat: dc.Node, z: dc.Node, params: Mapping[str, dc.Node]
) -> tuple[dc.Node, dc.Node]:
    """Importance logit mu_t and clamped observation log-variance from [h; z]."""
    joint = dc.concat_last([h_hat, z])
    hidden = dc.gelu(dc.add(dc.matmul(joint, params["head.mlp.w"]), params["head.mlp.b"]))
    mu = dc.add(dc.matmul(hidden, params["head.mu.w"]), params["head.mu.b"])
    raw_v = dc.add(dc.matmul(hidden, params["head.logv.w"]), params["head.logv.b"])
    return mu, dc.clip(raw_v, LOGVAR_MIN, LOGVAR_MAX)


def calibrate_probability(mu: dc.Node, temperature: float) -> dc.Node:
    """Temperature-scaled sigmoid of the importance logits."""
    if not temperature > 0:
        raise ConfigError(f"calibration temperature must be > 0, got {temperature}")
    return dc.sigmoid(dc.scale(mu, 1.0 / temperature))


def forward(
    h_hat: dc.Node, params: Mapping[str, dc.Node], noise: np.ndarray
) -> ImportanceOutput:
    """Posterior, latent draw, and importance outputs in one pass."""
    mu_z, log_var_z = posterior_params(h_hat, params)
    z = sample_latent(mu_z, log_var_z, noise)
    mu, log_v = importance_params(h_hat, z, params)
    return ImportanceOutput(mu=mu, log_v=log_v, mu_z=mu_z, log_var_z=log_var_z, z=z)
