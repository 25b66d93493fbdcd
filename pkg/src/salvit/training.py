"""Desk-scale training harness.

Covers dataset generation and ingestion, preprocessing, the AdamW
optimizer with warmup-plus-cosine schedule, gradient accumulation and
clipping, metrics logging, and evaluation.  The pipeline per image is:
saliency map on luminance, top-m patch selection, Inception-style
normalization, then the transformer.  Saliency maps and selections are
computed once per image and reused; they depend only on pixels and
saliency parameters, never on model state.

The synthetic dataset has three classes (filled rectangle, triangle,
disc) on smooth textured backgrounds.  Shape boundaries carry corners and
curvature, so salient patches concentrate on class-revealing pixels; a
model fed only the top patches can still classify, which is the trend the
harness exists to demonstrate.
"""

import csv
import dataclasses
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import patching, saliency, signal
from .errors import DivergenceError, ParameterError
from .model import ModelConfig, forward, init_params, loss_and_grad

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CLASS_NAMES = ("rectangle", "triangle", "disc")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    base_lr: float = 1e-3
    warmup_steps: int = 20
    weight_decay: float = 0.05
    clip_norm: float = 1.0
    batch_size: int = 16
    grad_accum_steps: int = 1
    seed: int = 0
    dropout: float = 0.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.grad_accum_steps < 1:
            raise ParameterError("epochs, batch_size, grad_accum_steps must be >= 1")
        if self.base_lr <= 0 or self.clip_norm <= 0:
            raise ParameterError("base_lr and clip_norm must be positive")
        if self.warmup_steps < 0 or self.weight_decay < 0:
            raise ParameterError("warmup_steps and weight_decay must be >= 0")
        if not 0 <= self.dropout < 1:
            raise ParameterError(f"dropout must be in [0, 1), got {self.dropout}")


def full_scale_train_config() -> TrainConfig:
    """Full-scale reference hyperparameters (constructible, not run here)."""
    return TrainConfig(
        epochs=300, base_lr=0.003, warmup_steps=20, weight_decay=0.3,
        clip_norm=1.0, batch_size=1, grad_accum_steps=4096, seed=0, dropout=0.1,
    )


@dataclass(frozen=True)
class DatasetItem:
    image: np.ndarray
    label: int
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Dataset:
    items: tuple
    class_names: tuple = CLASS_NAMES

    def __post_init__(self):
        if not self.items:
            raise ParameterError("dataset must be nonempty")
        labels = {it.label for it in self.items}
        if min(labels) < 0 or max(labels) >= len(self.class_names):
            raise ParameterError(
                f"labels {sorted(labels)} not dense in [0, {len(self.class_names)})"
            )

    def __len__(self):
        return len(self.items)


def normalize_inception(img: np.ndarray) -> np.ndarray:
    """Map [0, 1] pixels to [-1, 1]: (x - 0.5) / 0.5 per channel."""
    img = signal.validate_rgb(img)
    return (img - 0.5) / 0.5


def _smooth_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    """Blurred noise rescaled to [0, 1]; smooth enough to stay non-salient."""
    noise = rng.random((size, size))
    smooth = signal.gaussian_blur(noise, 2.0)
    lo, hi = smooth.min(), smooth.max()
    return (smooth - lo) / (hi - lo) if hi > lo else np.zeros_like(smooth)


def _triangle_mask(size: int, verts: np.ndarray) -> np.ndarray:
    rows, cols = np.mgrid[0:size, 0:size]
    px = np.stack([rows, cols], axis=-1).astype(np.float64)
    mask = np.ones((size, size), dtype=bool)
    for i in range(3):
        a, b = verts[i], verts[(i + 1) % 3]
        c = verts[(i + 2) % 3]
        edge = b - a
        normal = np.array([-edge[1], edge[0]])
        side_c = np.dot(c - a, normal)
        side_px = (px - a) @ normal
        mask &= side_px * side_c >= 0
    return mask


def _draw_item(rng: np.random.Generator, label: int, size: int) -> DatasetItem:
    tex = _smooth_texture(rng, size)
    bg_lo = rng.uniform(0.18, 0.24)
    bg_hi = rng.uniform(0.34, 0.42)
    base = bg_lo + (bg_hi - bg_lo) * tex
    gains = rng.uniform(0.85, 1.0, size=3)
    img = base[:, :, None] * gains[None, None, :]

    fill = rng.uniform(0.62, 0.98, size=3)
    margin = max(3, round(0.12 * size))
    meta = {}
    if label == 0:
        half_h = rng.uniform(0.12 * size, 0.26 * size)
        half_w = rng.uniform(0.12 * size, 0.26 * size)
        cy = rng.uniform(margin + half_h, size - 1 - margin - half_h)
        cx = rng.uniform(margin + half_w, size - 1 - margin - half_w)
        rows, cols = np.mgrid[0:size, 0:size]
        mask = (np.abs(rows - cy) <= half_h) & (np.abs(cols - cx) <= half_w)
        r0, r1 = int(np.ceil(cy - half_h)), int(np.floor(cy + half_h))
        c0, c1 = int(np.ceil(cx - half_w)), int(np.floor(cx + half_w))
        meta["corners"] = [(r0, c0), (r0, c1), (r1, c0), (r1, c1)]
    elif label == 1:
        radius = rng.uniform(0.18 * size, 0.30 * size)
        cy = rng.uniform(margin + radius, size - 1 - margin - radius)
        cx = rng.uniform(margin + radius, size - 1 - margin - radius)
        theta = rng.uniform(0, 2 * np.pi)
        angles = theta + np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
        angles = angles + rng.uniform(-0.4, 0.4, size=3)
        verts = np.stack([cy + radius * np.sin(angles), cx + radius * np.cos(angles)], axis=1)
        mask = _triangle_mask(size, verts)
        meta["corners"] = [(int(round(v[0])), int(round(v[1]))) for v in verts]
    else:
        radius = rng.uniform(0.14 * size, 0.28 * size)
        cy = rng.uniform(margin + radius, size - 1 - margin - radius)
        cx = rng.uniform(margin + radius, size - 1 - margin - radius)
        rows, cols = np.mgrid[0:size, 0:size]
        mask = (rows - cy) ** 2 + (cols - cx) ** 2 <= radius**2
        meta["center"] = (cy, cx)
        meta["radius"] = radius

    img[mask] = fill
    return DatasetItem(image=img, label=label, meta=meta)


def make_synthetic_dataset(num_per_class: int, image_size: int = 32, seed: int = 0) -> Dataset:
    """Three shape classes on textured backgrounds, deterministic per seed."""
    if num_per_class < 1:
        raise ParameterError("num_per_class must be >= 1")
    if image_size < signal.MIN_IMAGE_SIDE:
        raise ParameterError(
            f"image_size must be >= {signal.MIN_IMAGE_SIDE}, got {image_size}"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    items = []
    for label in range(len(CLASS_NAMES)):
        for _ in range(num_per_class):
            items.append(_draw_item(rng, label, image_size))
    return Dataset(items=tuple(items))


def save_dataset_folder(ds: Dataset, root) -> None:
    """Write the dataset as root/<class>/<index>.png, 8-bit RGB."""
    from pathlib import Path

    root = Path(root)
    for name in ds.class_names:
        (root / name).mkdir(parents=True, exist_ok=True)
    counters = {name: 0 for name in ds.class_names}
    for item in ds.items:
        name = ds.class_names[item.label]
        signal.write_rgb8_png(root / name / f"{counters[name]:05d}.png", item.image)
        counters[name] += 1


def load_dataset_folder(root) -> Dataset:
    """Read a root/<class>/*.png tree; class order and labels follow sorted names."""
    from pathlib import Path

    root = Path(root)
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise ParameterError(f"{root}: no class subdirectories")
    items = []
    for label, d in enumerate(class_dirs):
        for f in sorted(d.glob("*.png")):
            items.append(DatasetItem(image=signal.load_image(f), label=label))
    return Dataset(items=tuple(items), class_names=tuple(d.name for d in class_dirs))


def lr_schedule(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup to base_lr, then cosine decay to 0 at total_steps."""
    if not 0 <= step <= total_steps:
        raise ParameterError(f"step {step} outside [0, {total_steps}]")
    warmup = min(cfg.warmup_steps, total_steps)
    if warmup > 0 and step < warmup:
        return cfg.base_lr * step / warmup
    if total_steps == warmup:
        return cfg.base_lr if step == warmup and warmup == 0 else 0.0
    progress = (step - warmup) / (total_steps - warmup)
    return 0.5 * cfg.base_lr * (1.0 + math.cos(math.pi * progress))


def init_adam_state(params: dict) -> dict:
    return {
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
        "t": 0,
    }


def adamw_step(params: dict, grads: dict, state: dict, lr: float, cfg: TrainConfig):
    """One decoupled-weight-decay Adam update, in place.

    Decay applies only to tensors of rank >= 2 (weight matrices); biases,
    norm parameters, and the class token are not decayed.
    """
    state["t"] += 1
    t = state["t"]
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    for k, p in params.items():
        g = grads[k]
        m = state["m"][k]
        v = state["v"][k]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        if cfg.weight_decay > 0 and p.ndim >= 2:
            update = update + cfg.weight_decay * p
        p -= lr * update
    return params, state


def clip_gradients(grads: dict, clip_norm: float) -> float:
    """Scale all gradients so the global norm is at most clip_norm; returns the pre-clip norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > clip_norm:
        factor = clip_norm / total
        for g in grads.values():
            g *= factor
    return total


@dataclass
class MetricsLog:
    step_rows: list = field(default_factory=list)
    epoch_rows: list = field(default_factory=list)

    def write_steps(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "lr", "loss"])
            for step, lr, loss in self.step_rows:
                w.writerow([step, repr(lr), repr(loss)])

    def write_epochs(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_acc", "eval_acc"])
            for epoch, train_acc, eval_acc in self.epoch_rows:
                w.writerow([epoch, repr(train_acc), repr(eval_acc)])


class SaliencyCache:
    """Maps computed once per (image, params); optionally persisted as .npy."""

    def __init__(self, cache_dir=None):
        self._mem = {}
        self._dir = None
        if cache_dir is not None:
            from pathlib import Path

            self._dir = Path(cache_dir)
            self._dir.mkdir(parents=True, exist_ok=True)

    def _key(self, lum: np.ndarray, rog, curv) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(lum).tobytes())
        h.update(repr((lum.shape, rog, curv)).encode())
        return h.hexdigest()

    def get(self, lum: np.ndarray, rog, curv) -> np.ndarray:
        key = self._key(lum, rog, curv)
        if key in self._mem:
            return self._mem[key]
        if self._dir is not None:
            f = self._dir / f"{key}.npy"
            if f.exists():
                values = np.load(f)
                self._mem[key] = values
                return values
        values = saliency.saliency_map(lum, rog, curv).values
        self._mem[key] = values
        if self._dir is not None:
            np.save(self._dir / f"{key}.npy", values)
        return values


def prepare_inputs(
    ds: Dataset,
    m: int,
    model_cfg: ModelConfig,
    rog: saliency.RogParams = saliency.RogParams(),
    curv: saliency.CurvatureParams = saliency.CurvatureParams(),
    order: str = "salience",
    cache: SaliencyCache | None = None,
):
    """Select patches for every image; returns (patches, coords, labels) arrays.

    patches: (N, m, p*p*3) Inception-normalized pixels; coords: (N, m, 2)
    integer grid positions; labels: (N,).
    """
    cache = cache or SaliencyCache()
    p = model_cfg.patch_size
    all_vecs, all_coords, labels = [], [], []
    for item in ds.items:
        img = signal.validate_rgb(item.image)
        if img.shape[0] != model_cfg.input_size or img.shape[1] != model_cfg.input_size:
            raise ParameterError(
                f"image {img.shape[:2]} does not match configured input size "
                f"{model_cfg.input_size}"
            )
        lum = signal.to_luminance(img)
        smap = cache.get(lum, rog, curv)
        scores = patching.patch_scores(smap, p)
        sel = patching.select_top_m(scores, m, p, order=order)
        vecs, coords = patching.patch_matrix(normalize_inception(img), sel)
        all_vecs.append(vecs)
        all_coords.append(coords)
        labels.append(item.label)
    return np.stack(all_vecs), np.stack(all_coords), np.array(labels, dtype=np.int64)


@dataclass
class TrainResult:
    params: dict
    best_params: dict
    metrics: MetricsLog
    initial_loss: float
    best_eval_acc: float


def _accuracy(params, cfg, patches, coords, labels) -> float:
    preds = []
    for start in range(0, len(labels), 64):
        logits = forward(patches[start : start + 64], coords[start : start + 64], params, cfg)
        preds.append(np.argmax(logits, axis=1))
    return float(np.mean(np.concatenate(preds) == labels))


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset: Dataset,
    m: int,
    eval_dataset: Dataset | None = None,
    rog: saliency.RogParams = saliency.RogParams(),
    curv: saliency.CurvatureParams = saliency.CurvatureParams(),
    order: str = "salience",
    cache: SaliencyCache | None = None,
) -> TrainResult:
    """Full training run; deterministic for a fixed seed and thread count.

    Gradients from grad_accum_steps micro-batches are combined as an
    example-weighted mean (the effective batch is batch_size times
    grad_accum_steps), clipped by global norm, then applied with AdamW.
    """
    cfg = dataclasses.replace(model_cfg, dropout_rate=train_cfg.dropout)
    cache = cache or SaliencyCache()
    patches, coords, labels = prepare_inputs(dataset, m, cfg, rog, curv, order, cache)
    if labels.max() >= cfg.num_classes:
        raise ParameterError(
            f"dataset has label {labels.max()} but the model has {cfg.num_classes} classes"
        )
    eval_arrays = None
    if eval_dataset is not None:
        eval_arrays = prepare_inputs(eval_dataset, m, cfg, rog, curv, order, cache)

    n = len(labels)
    rng = np.random.Generator(np.random.PCG64(train_cfg.seed))
    params = init_params(cfg, train_cfg.seed)
    state = init_adam_state(params)
    micro_per_epoch = math.ceil(n / train_cfg.batch_size)
    steps_per_epoch = math.ceil(micro_per_epoch / train_cfg.grad_accum_steps)
    total_steps = train_cfg.epochs * steps_per_epoch

    metrics = MetricsLog()
    initial_loss = None
    best_params = {k: v.copy() for k, v in params.items()}
    best_eval_acc = -1.0
    step = 0
    for epoch in range(train_cfg.epochs):
        perm = rng.permutation(n)
        micro = 0
        while micro < micro_per_epoch:
            accum = {k: np.zeros_like(v) for k, v in params.items()}
            loss_sum = 0.0
            count = 0
            for _ in range(train_cfg.grad_accum_steps):
                if micro >= micro_per_epoch:
                    break
                idx = perm[micro * train_cfg.batch_size : (micro + 1) * train_cfg.batch_size]
                micro += 1
                loss, grads = loss_and_grad(
                    patches[idx], coords[idx], labels[idx], params, cfg,
                    training=True, rng=rng,
                )
                if not np.isfinite(loss):
                    raise DivergenceError(
                        f"loss became non-finite at step {step} (epoch {epoch}); "
                        "reduce the learning rate"
                    )
                b = len(idx)
                for k in accum:
                    accum[k] += grads[k] * b
                loss_sum += loss * b
                count += b
            for k in accum:
                accum[k] /= count
            mean_loss = loss_sum / count
            if initial_loss is None:
                initial_loss = mean_loss
            clip_gradients(accum, train_cfg.clip_norm)
            lr = lr_schedule(step, total_steps, train_cfg)
            adamw_step(params, accum, state, lr, train_cfg)
            step += 1
            metrics.step_rows.append((step, lr, mean_loss))
        train_acc = _accuracy(params, cfg, patches, coords, labels)
        if eval_arrays is not None:
            eval_acc = _accuracy(params, cfg, *eval_arrays)
        else:
            eval_acc = train_acc
        metrics.epoch_rows.append((epoch, train_acc, eval_acc))
        if eval_acc > best_eval_acc:
            best_eval_acc = eval_acc
            best_params = {k: v.copy() for k, v in params.items()}
    return TrainResult(
        params=params,
        best_params=best_params,
        metrics=metrics,
        initial_loss=float(initial_loss),
        best_eval_acc=float(best_eval_acc),
    )


def evaluate(
    params: dict,
    model_cfg: ModelConfig,
    dataset: Dataset,
    m: int,
    rog: saliency.RogParams = saliency.RogParams(),
    curv: saliency.CurvatureParams = saliency.CurvatureParams(),
    order: str = "salience",
    cache: SaliencyCache | None = None,
) -> float:
    """Top-1 accuracy of the model on a dataset."""
    if max(it.label for it in dataset.items) >= model_cfg.num_classes:
        raise ParameterError("dataset labels exceed the model's class count")
    patches, coords, labels = prepare_inputs(dataset, m, model_cfg, rog, curv, order, cache)
    return _accuracy(params, model_cfg, patches, coords, labels)
