"""Transformer encoder over selected patches.

Tokens are linear embeddings of raw patch pixels plus a positional term
produced by a linear layer on the patch's normalized (row, col) grid
coordinates.  Because position enters through coordinates rather than a
per-slot table, the model accepts any subset of patches in any order; a
learned class token (no positional term) is prepended and its final state
feeds the classification head.

Blocks are pre-norm residual: x + MHA(LN(x)) then x + MLP(LN(x)) with
exact-erf GELU.  Everything is float64 numpy.  The backward pass is
written by hand against the exact forward graph; tests pin it to central
finite differences.

Parameters live in a plain dict of arrays whose canonical order is given
by param_order(); the checkpoint format serializes tensors in that order.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import ParameterError, ShapeError

LN_EPS = 1e-6
INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 32
    patch_size: int = 4
    embed_dim: int = 64
    num_heads: int = 4
    depth: int = 4
    mlp_dim: int = 128
    num_classes: int = 3
    dropout_rate: float = 0.0

    def __post_init__(self):
        for name in ("input_size", "patch_size", "embed_dim", "num_heads", "depth", "mlp_dim", "num_classes"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive")
        if self.embed_dim % self.num_heads:
            raise ParameterError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.input_size % self.patch_size:
            raise ParameterError(
                f"input_size {self.input_size} not divisible by patch_size {self.patch_size}"
            )
        if not 0 <= self.dropout_rate < 1:
            raise ParameterError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def grid_side(self) -> int:
        return self.input_size // self.patch_size

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3


def full_scale_config() -> ModelConfig:
    """The full-scale reference configuration (not run in CI)."""
    return ModelConfig(
        input_size=224, patch_size=16, embed_dim=768, num_heads=12,
        depth=12, mlp_dim=3072, num_classes=1000, dropout_rate=0.1,
    )


def param_order(cfg: ModelConfig):
    """Canonical tensor order used by init, optimizer state, and checkpoints."""
    names = ["patch_embed_w", "patch_embed_b", "pos_w", "pos_b", "class_token"]
    for i in range(cfg.depth):
        for suffix in (
            "norm1_scale", "norm1_shift",
            "q_w", "q_b", "k_w", "k_b", "v_w", "v_b", "o_w", "o_b",
            "norm2_scale", "norm2_shift",
            "mlp1_w", "mlp1_b", "mlp2_w", "mlp2_b",
        ):
            names.append(f"block{i}.{suffix}")
    names += ["final_norm_scale", "final_norm_shift", "head_w", "head_b"]
    return names


def param_shapes(cfg: ModelConfig):
    d, m = cfg.embed_dim, cfg.mlp_dim
    shapes = {
        "patch_embed_w": (cfg.patch_dim, d),
        "patch_embed_b": (d,),
        "pos_w": (2, d),
        "pos_b": (d,),
        "class_token": (d,),
        "final_norm_scale": (d,),
        "final_norm_shift": (d,),
        "head_w": (d, cfg.num_classes),
        "head_b": (cfg.num_classes,),
    }
    for i in range(cfg.depth):
        shapes.update({
            f"block{i}.norm1_scale": (d,),
            f"block{i}.norm1_shift": (d,),
            f"block{i}.q_w": (d, d), f"block{i}.q_b": (d,),
            f"block{i}.k_w": (d, d), f"block{i}.k_b": (d,),
            f"block{i}.v_w": (d, d), f"block{i}.v_b": (d,),
            f"block{i}.o_w": (d, d), f"block{i}.o_b": (d,),
            f"block{i}.norm2_scale": (d,),
            f"block{i}.norm2_shift": (d,),
            f"block{i}.mlp1_w": (d, m), f"block{i}.mlp1_b": (m,),
            f"block{i}.mlp2_w": (m, d), f"block{i}.mlp2_b": (d,),
        })
    return shapes


def _truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) with resampling outside +-2 std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while np.any(bad):
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def init_params(cfg: ModelConfig, seed: int) -> dict:
    """Weight matrices and the class token are truncated-normal(0.02);
    biases and norm shifts start at 0, norm scales at 1.

    The head starts at exactly zero so a fresh model yields uniform
    logits and the textbook initial loss ln(num_classes).
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    params = {}
    for name in param_order(cfg):
        shape = param_shapes(cfg)[name]
        base = name.split(".")[-1]
        if base in ("head_w", "head_b"):
            params[name] = np.zeros(shape)
        elif base.endswith("_scale"):
            params[name] = np.ones(shape)
        elif base.endswith("_b") or base.endswith("_shift"):
            params[name] = np.zeros(shape)
        else:
            params[name] = _truncated_normal(rng, shape, INIT_STD)
    return params


def normalize_coords(coords: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Map integer grid (row, col] pairs to [0, 1]^2 by (index / (side - 1))."""
    coords = np.asarray(coords, dtype=np.float64)
    side = cfg.grid_side
    if side > 1:
        return coords / (side - 1)
    return np.zeros_like(coords)


def _validate_batch(patches, coords, cfg: ModelConfig):
    patches = np.asarray(patches)
    coords = np.asarray(coords)
    if patches.dtype == object or coords.dtype == object:
        raise ParameterError("all examples in a batch must have the same number of patches")
    if patches.ndim != 3 or patches.shape[2] != cfg.patch_dim:
        raise ShapeError(
            f"patches must be (batch, s, {cfg.patch_dim}), got {patches.shape}"
        )
    if coords.shape != patches.shape[:2] + (2,):
        raise ShapeError(
            f"coords must be (batch, s, 2) matching patches {patches.shape[:2]}, got {coords.shape}"
        )
    return patches.astype(np.float64), coords


def encode_input(patches: np.ndarray, coords: np.ndarray, params: dict, cfg: ModelConfig) -> np.ndarray:
    """Embed patches and coordinates into tokens; prepend the class token.

    coords are integer grid positions; they are normalized to [0, 1]^2
    here.  The class token receives no positional term.
    """
    patches, coords = _validate_batch(patches, coords, cfg)
    b = patches.shape[0]
    norm = normalize_coords(coords, cfg)
    tok = patches @ params["patch_embed_w"] + params["patch_embed_b"]
    tok = tok + norm @ params["pos_w"] + params["pos_b"]
    cls = np.broadcast_to(params["class_token"], (b, 1, cfg.embed_dim))
    return np.concatenate([cls, tok], axis=1)


def _layer_norm_fwd(x, scale, shift):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * scale + shift, (xhat, inv)


def _layer_norm_bwd(dout, cache, scale):
    xhat, inv = cache
    dscale = np.sum(dout * xhat, axis=tuple(range(dout.ndim - 1)))
    dshift = np.sum(dout, axis=tuple(range(dout.ndim - 1)))
    dxhat = dout * scale
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dscale, dshift


def _gelu_fwd(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return cdf + x * pdf


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x, num_heads):
    b, s, d = x.shape
    return x.reshape(b, s, num_heads, d // num_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, s, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, s, h * dh)


def _attention_fwd(x, p, prefix, cfg):
    h = cfg.num_heads
    dh = cfg.embed_dim // h
    q = _split_heads(x @ p[f"{prefix}.q_w"] + p[f"{prefix}.q_b"], h)
    k = _split_heads(x @ p[f"{prefix}.k_w"] + p[f"{prefix}.k_b"], h)
    v = _split_heads(x @ p[f"{prefix}.v_w"] + p[f"{prefix}.v_b"], h)
    scale = 1.0 / np.sqrt(dh)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    probs = _softmax(scores)
    ctx = _merge_heads(probs @ v)
    out = ctx @ p[f"{prefix}.o_w"] + p[f"{prefix}.o_b"]
    return out, (x, q, k, v, probs, ctx, scale)


def _attention_bwd(dout, cache, p, prefix, cfg, grads):
    x, q, k, v, probs, ctx, scale = cache
    h = cfg.num_heads
    b, s, d = x.shape
    flat = lambda a: a.reshape(-1, a.shape[-1])

    grads[f"{prefix}.o_w"] += flat(ctx).T @ flat(dout)
    grads[f"{prefix}.o_b"] += dout.sum(axis=(0, 1))
    dctx = _split_heads(dout @ p[f"{prefix}.o_w"].T, h)

    dprobs = dctx @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dctx
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dscores *= scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q

    dx = np.zeros_like(x)
    for name, dhead in (("q", dq), ("k", dk), ("v", dv)):
        dmerged = _merge_heads(dhead)
        grads[f"{prefix}.{name}_w"] += flat(x).T @ flat(dmerged)
        grads[f"{prefix}.{name}_b"] += dmerged.sum(axis=(0, 1))
        dx += dmerged @ p[f"{prefix}.{name}_w"].T
    return dx


def _dropout_mask(shape, rate, rng):
    keep = 1.0 - rate
    return (rng.random(shape) < keep).astype(np.float64) / keep


def _block_fwd(x, p, prefix, cfg, training, rng):
    h1, ln1_cache = _layer_norm_fwd(x, p[f"{prefix}.norm1_scale"], p[f"{prefix}.norm1_shift"])
    attn, attn_cache = _attention_fwd(h1, p, prefix, cfg)
    mask1 = None
    if training and cfg.dropout_rate > 0:
        mask1 = _dropout_mask(attn.shape, cfg.dropout_rate, rng)
        attn = attn * mask1
    x2 = x + attn

    h2, ln2_cache = _layer_norm_fwd(x2, p[f"{prefix}.norm2_scale"], p[f"{prefix}.norm2_shift"])
    pre = h2 @ p[f"{prefix}.mlp1_w"] + p[f"{prefix}.mlp1_b"]
    act = _gelu_fwd(pre)
    mlp = act @ p[f"{prefix}.mlp2_w"] + p[f"{prefix}.mlp2_b"]
    mask2 = None
    if training and cfg.dropout_rate > 0:
        mask2 = _dropout_mask(mlp.shape, cfg.dropout_rate, rng)
        mlp = mlp * mask2
    out = x2 + mlp
    cache = (ln1_cache, attn_cache, mask1, ln2_cache, h2, pre, act, mask2)
    return out, cache


def _block_bwd(dout, cache, p, prefix, cfg, grads):
    ln1_cache, attn_cache, mask1, ln2_cache, h2, pre, act, mask2 = cache
    flat = lambda a: a.reshape(-1, a.shape[-1])

    dmlp = dout if mask2 is None else dout * mask2
    grads[f"{prefix}.mlp2_w"] += flat(act).T @ flat(dmlp)
    grads[f"{prefix}.mlp2_b"] += dmlp.sum(axis=(0, 1))
    dact = dmlp @ p[f"{prefix}.mlp2_w"].T
    dpre = dact * _gelu_grad(pre)
    grads[f"{prefix}.mlp1_w"] += flat(h2).T @ flat(dpre)
    grads[f"{prefix}.mlp1_b"] += dpre.sum(axis=(0, 1))
    dh2 = dpre @ p[f"{prefix}.mlp1_w"].T
    dx2, dscale2, dshift2 = _layer_norm_bwd(dh2, ln2_cache, p[f"{prefix}.norm2_scale"])
    grads[f"{prefix}.norm2_scale"] += dscale2
    grads[f"{prefix}.norm2_shift"] += dshift2
    dx2 = dx2 + dout

    dattn = dx2 if mask1 is None else dx2 * mask1
    dh1 = _attention_bwd(dattn, attn_cache, p, prefix, cfg, grads)
    dx, dscale1, dshift1 = _layer_norm_bwd(dh1, ln1_cache, p[f"{prefix}.norm1_scale"])
    grads[f"{prefix}.norm1_scale"] += dscale1
    grads[f"{prefix}.norm1_shift"] += dshift1
    return dx + dx2


def _forward_with_cache(patches, coords, params, cfg, training=False, rng=None):
    if training and cfg.dropout_rate > 0 and rng is None:
        raise ParameterError("training with dropout needs an rng")
    x = encode_input(patches, coords, params, cfg)
    block_caches = []
    for i in range(cfg.depth):
        x, cache = _block_fwd(x, params, f"block{i}", cfg, training, rng)
        block_caches.append(cache)
    final, final_cache = _layer_norm_fwd(x, params["final_norm_scale"], params["final_norm_shift"])
    cls = final[:, 0, :]
    logits = cls @ params["head_w"] + params["head_b"]
    return logits, (block_caches, final_cache, cls, final.shape)


def forward(patches, coords, params: dict, cfg: ModelConfig, training: bool = False,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Logits (batch, num_classes) for a batch of patch sets.

    In eval mode (the default) the output is a pure function of the
    (patch, coordinate) multiset: reordering the patches of an example
    moves logits by no more than floating-point noise.
    """
    logits, _ = _forward_with_cache(patches, coords, params, cfg, training, rng)
    return logits


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy and the gradient wrt logits."""
    labels = np.asarray(labels)
    b, k = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"labels must be ({b},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ParameterError(f"labels must lie in [0, {k}), got range "
                             f"[{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logz - shifted[np.arange(b), labels]))
    probs = _softmax(logits)
    probs[np.arange(b), labels] -= 1.0
    return loss, probs / b


def loss_and_grad(patches, coords, labels, params: dict, cfg: ModelConfig,
                  training: bool = False, rng: np.random.Generator | None = None):
    """Mean cross-entropy over the batch and gradients for every parameter.

    The backward pass mirrors the forward graph exactly; finite-difference
    tests hold every tensor to < 1e-4 relative error.
    """
    patches, coords = _validate_batch(patches, coords, cfg)
    logits, (block_caches, final_cache, cls, final_shape) = _forward_with_cache(
        patches, coords, params, cfg, training, rng
    )
    loss, dlogits = cross_entropy(logits, labels)

    grads = {name: np.zeros_like(params[name]) for name in params}
    grads["head_w"] += cls.T @ dlogits
    grads["head_b"] += dlogits.sum(axis=0)
    dfinal = np.zeros(final_shape)
    dfinal[:, 0, :] = dlogits @ params["head_w"].T
    dx, dscale, dshift = _layer_norm_bwd(dfinal, final_cache, params["final_norm_scale"])
    grads["final_norm_scale"] += dscale
    grads["final_norm_shift"] += dshift

    for i in reversed(range(cfg.depth)):
        dx = _block_bwd(dx, block_caches[i], params, f"block{i}", cfg, grads)

    # encode_input backward: class token is token 0, patches follow.
    grads["class_token"] += dx[:, 0, :].sum(axis=0)
    dtok = dx[:, 1:, :]
    flat = lambda a: a.reshape(-1, a.shape[-1])
    grads["patch_embed_w"] += flat(patches).T @ flat(dtok)
    grads["patch_embed_b"] += dtok.sum(axis=(0, 1))
    norm = normalize_coords(coords, cfg)
    grads["pos_w"] += flat(norm).T @ flat(dtok)
    grads["pos_b"] += dtok.sum(axis=(0, 1))
    return loss, grads


def count_params(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())
