"""Analytic cost models and wall-clock measurement.

The estimates are closed-form functions of the model configuration and
the token count, split into named stages whose sum is the reported total.
They exist to show how cost scales with the number of selected patches:
attention's quadratic term shrinks with the square of the sequence length
while everything else shrinks linearly, and activation memory is nearly
affine in sequence length because the quadratic attention-probability
share is small next to the token activations plus the model-sized
constant (parameters, gradients, accumulation buffer, and the two Adam
moment buffers).
"""

import dataclasses
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .model import ModelConfig, count_params, init_params, loss_and_grad, forward

BYTES_PER_ELEMENT = 8  # float64 everywhere

# Per-element costs for non-matmul arithmetic, counted in the
# "elementwise" stage: exp/add/div for softmax, erf-based GELU, the
# normalization chain of LayerNorm, bias and residual additions.
SOFTMAX_FLOPS_PER_ELEMENT = 5
GELU_FLOPS_PER_ELEMENT = 8
LAYER_NORM_FLOPS_PER_ELEMENT = 8
ADD_FLOPS_PER_ELEMENT = 1


@dataclass(frozen=True)
class CostReport:
    """Stage-labeled cost estimate; total is exactly the sum of stages."""

    kind: str
    unit: str
    s: int
    batch: int
    stages: dict
    config: dict
    notes: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.stages.values())

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "unit": self.unit,
            "s": self.s,
            "batch": self.batch,
            "stages": dict(self.stages),
            "total": self.total,
            "config": dict(self.config),
            "notes": dict(self.notes),
        }


def _check_args(cfg: ModelConfig, s: int, batch: int):
    if s < 1:
        raise ParameterError(f"s must be >= 1, got {s}")
    if batch < 1:
        raise ParameterError(f"batch must be >= 1, got {batch}")


def flops_estimate(cfg: ModelConfig, s: int, batch: int = 1) -> CostReport:
    """Forward-pass FLOPs, counting each multiply-accumulate as 2.

    Per block and token the linear work is 4 D^2 (QKVO projections) plus
    2 D mlp_dim (the MLP pair); the quadratic work is 2 s'^2 D for
    attention scores and the weighted sum, with s' = s + 1 for the class
    token.  Softmax, GELU, LayerNorm, bias and residual additions are
    counted with the per-element constants recorded in the notes.
    """
    _check_args(cfg, s, batch)
    sp = s + 1
    d, mlp, depth, heads = cfg.embed_dim, cfg.mlp_dim, cfg.depth, cfg.num_heads
    embed_macs = s * cfg.patch_dim * d + s * 2 * d
    attn_linear_macs = depth * sp * 4 * d * d
    attn_quad_macs = depth * 2 * sp * sp * d
    mlp_macs = depth * sp * 2 * d * mlp
    head_macs = d * cfg.num_classes
    elementwise = (
        SOFTMAX_FLOPS_PER_ELEMENT * depth * heads * sp * sp
        + GELU_FLOPS_PER_ELEMENT * depth * sp * mlp
        + LAYER_NORM_FLOPS_PER_ELEMENT * (2 * depth + 1) * sp * d
        + ADD_FLOPS_PER_ELEMENT * (depth * sp * (5 * d + mlp) + 2 * depth * sp * d)
    )
    stages = {
        "embed": 2 * batch * embed_macs,
        "attention_linear": 2 * batch * attn_linear_macs,
        "attention_quadratic": 2 * batch * attn_quad_macs,
        "mlp": 2 * batch * mlp_macs,
        "head": 2 * batch * head_macs,
        "elementwise": batch * elementwise,
    }
    notes = {
        "mac_convention": "1 multiply-accumulate = 2 FLOPs",
        "softmax_flops_per_element": SOFTMAX_FLOPS_PER_ELEMENT,
        "gelu_flops_per_element": GELU_FLOPS_PER_ELEMENT,
        "layer_norm_flops_per_element": LAYER_NORM_FLOPS_PER_ELEMENT,
        "add_flops_per_element": ADD_FLOPS_PER_ELEMENT,
        "sequence_length": f"s' = s + 1 = {sp} (class token included)",
    }
    return CostReport(
        kind="flops", unit="flops", s=s, batch=batch,
        stages=stages, config=dataclasses.asdict(cfg), notes=notes,
    )


def memory_estimate(cfg: ModelConfig, s: int, batch: int = 256) -> CostReport:
    """Training-time memory: activations kept for backward plus a constant.

    Token-shaped activations per block: the block input, the two LayerNorm
    outputs, q, k, v, the attention context, and the post-attention
    residual (8 of size s' x D), plus the two MLP hidden tensors (s' x
    mlp_dim) and the attention probabilities (heads x s'^2).  Three more
    s' x D tensors cover the encoder input and the final LayerNorm pair.
    The tokens and mlp_hiddens stages report the patch-token share (the
    part proportional to s); the class token's fixed slice of those
    activations is folded into the constant stage together with five
    model-sized buffers: the parameters, their gradients, the
    accumulation buffer, and Adam's two moments.  Stage totals equal the
    full s' accounting.
    """
    _check_args(cfg, s, batch)
    sp = s + 1
    d, mlp, depth, heads = cfg.embed_dim, cfg.mlp_dim, cfg.depth, cfg.num_heads
    n_params = count_params(cfg)
    token_slices = 8 * depth + 3
    class_token_bytes = batch * (token_slices * d + 2 * depth * mlp) * BYTES_PER_ELEMENT
    stages = {
        "tokens": batch * token_slices * s * d * BYTES_PER_ELEMENT,
        "mlp_hiddens": batch * 2 * depth * s * mlp * BYTES_PER_ELEMENT,
        "attention_probs": batch * depth * heads * sp * sp * BYTES_PER_ELEMENT,
        "constant": 5 * n_params * BYTES_PER_ELEMENT + class_token_bytes,
    }
    notes = {
        "element_size_bytes": BYTES_PER_ELEMENT,
        "constant": ("params + grads + accumulation buffer + Adam m and v, "
                     "plus the class token's activation slice"),
        "sequence_length": f"s' = s + 1 = {sp} (class token included)",
    }
    return CostReport(
        kind="memory", unit="bytes", s=s, batch=batch,
        stages=stages, config=dataclasses.asdict(cfg), notes=notes,
    )


@dataclass(frozen=True)
class RuntimeReport:
    s: int
    batch: int
    repeats: int
    threads: int | None
    forward_ms: tuple
    train_ms: tuple

    @property
    def forward_median_ms(self) -> float:
        return statistics.median(self.forward_ms)

    @property
    def train_median_ms(self) -> float:
        return statistics.median(self.train_ms)

    @staticmethod
    def _iqr(samples) -> float:
        q = statistics.quantiles(samples, n=4)
        return q[2] - q[0]

    @property
    def forward_iqr_ms(self) -> float:
        return self._iqr(self.forward_ms)

    @property
    def train_iqr_ms(self) -> float:
        return self._iqr(self.train_ms)

    def as_dict(self) -> dict:
        return {
            "s": self.s,
            "batch": self.batch,
            "repeats": self.repeats,
            "threads": self.threads,
            "forward_ms": list(self.forward_ms),
            "train_ms": list(self.train_ms),
            "forward_median_ms": self.forward_median_ms,
            "forward_iqr_ms": self.forward_iqr_ms,
            "train_median_ms": self.train_median_ms,
            "train_iqr_ms": self.train_iqr_ms,
        }


def measure_runtime(cfg: ModelConfig, s: int, batch: int, repeats: int = 9,
                    seed: int = 0, warmup: int = 2, threads: int | None = None) -> RuntimeReport:
    """Median wall-clock of forward and forward+backward on random inputs.

    The workload is deterministic per seed; warmup iterations are run and
    discarded before timing.
    """
    _check_args(cfg, s, batch)
    if repeats < 5:
        raise ParameterError(f"repeats must be >= 5, got {repeats}")
    rng = np.random.Generator(np.random.PCG64(seed))
    params = init_params(cfg, seed)
    patches = rng.random((batch, s, cfg.patch_dim))
    coords = rng.integers(0, cfg.grid_side, size=(batch, s, 2))
    labels = rng.integers(0, cfg.num_classes, size=batch)

    for _ in range(warmup):
        forward(patches, coords, params, cfg)
        loss_and_grad(patches, coords, labels, params, cfg)

    forward_ms = []
    train_ms = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        forward(patches, coords, params, cfg)
        forward_ms.append((time.perf_counter() - t0) * 1e3)
        t0 = time.perf_counter()
        loss_and_grad(patches, coords, labels, params, cfg)
        train_ms.append((time.perf_counter() - t0) * 1e3)
    return RuntimeReport(
        s=s, batch=batch, repeats=repeats, threads=threads,
        forward_ms=tuple(forward_ms), train_ms=tuple(train_ms),
    )


def affine_fit_r2(xs, ys) -> float:
    """R-squared of the least-squares line through (xs, ys)."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    coeffs = np.polyfit(xs, ys, deg=1)
    pred = np.polyval(coeffs, xs)
    ss_res = float(np.sum((ys - pred) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    return 1.0 - ss_res / ss_tot
