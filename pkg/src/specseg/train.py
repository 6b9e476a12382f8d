"""Training loop: RMSprop, global-norm gradient clipping, early stopping,
loss-weight projection, and threshold evaluation metrics.

Each epoch draws `augment_multiplier` freshly augmented copies of every
training sample, shuffles them, and steps over batches. Validation Dice is
monitored for early stopping; the best-scoring state is returned. All
randomness derives from the config seed, so runs are bit-reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, asdict, field

import numpy as np

from . import loss as L
from . import ops
from .errors import ConfigError, NonFiniteError, NumericError
from .model import SegModel
from .tensor import Tape, Tensor

DICE_EPS = 1e-7


@dataclass
class TrainConfig:
    lr: float = 1e-4
    optimizer: str = "rmsprop"
    rms_smoothing: float = 0.9
    rms_eps: float = 1e-8
    grad_clip_norm: float = 1.0
    batch_size: int = 4
    epochs: int = 45
    augment_multiplier: int = 2
    augment: bool = True
    early_stop_patience: int = 15
    weight_decay: float = 1e-4
    seed: int = 0
    device: str = "cpu"
    loss_mode: str = "adaptive"
    boundary_bce_weight: float = 5.0
    val_fraction: float = 0.2
    eval_every: int = 1

    def __post_init__(self):
        if self.device != "cpu":
            raise ConfigError("only device='cpu' is supported")
        if self.optimizer != "rmsprop":
            raise ConfigError("only optimizer='rmsprop' is supported")
        if self.loss_mode not in ("adaptive", "core"):
            raise ConfigError("loss_mode must be adaptive|core")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        for name in ("grad_clip_norm", "batch_size", "epochs", "augment_multiplier"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.early_stop_patience > self.epochs:
            raise ConfigError("early_stop_patience must be <= epochs")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown train config keys: {sorted(extra)}")
        return cls(**d)


@dataclass
class MetricsRow:
    epoch: int
    split: str
    dice: float
    iou: float
    loss_total: float
    loss_core: float = float("nan")
    loss_bnd: float = float("nan")
    loss_str: float = float("nan")
    loss_sca: float = float("nan")
    loss_tex: float = float("nan")
    w_core: float = float("nan")
    w_bnd: float = float("nan")
    w_str: float = float("nan")
    w_sca: float = float("nan")
    w_tex: float = float("nan")
    wall_ms: float = 0.0

    COLUMNS = ("epoch", "split", "dice", "iou", "loss_total", "loss_core", "loss_bnd",
               "loss_str", "loss_sca", "loss_tex", "w_core", "w_bnd", "w_str",
               "w_sca", "w_tex", "wall_ms")

    def row(self):
        return [getattr(self, c) for c in self.COLUMNS]


def clip_grad_norm(grads, max_norm: float = 1.0):
    """Scale all gradients so the global L2 norm is at most max_norm."""
    sq = 0.0
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("clip_grad_norm")
        sq += float((g.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(sq))
    if norm > max_norm:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm


class RMSprop:
    """Squared-gradient smoothing 0.9, eps 1e-8, no momentum, decoupled decay."""

    def __init__(self, params: dict, lr: float, smoothing: float = 0.9, eps: float = 1e-8,
                 weight_decay: float = 0.0, decay_names=()):
        self.params = params
        self.lr = lr
        self.smoothing = smoothing
        self.eps = eps
        self.weight_decay = weight_decay
        self.decay_names = set(decay_names)
        self.state = {name: np.zeros_like(t.data, dtype=np.float64) for name, t in params.items()}

    def step(self, grads: dict):
        a = self.smoothing
        for name, t in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            s = self.state[name]
            s *= a
            s += (1 - a) * (g.astype(np.float64) ** 2)
            update = self.lr * g / (np.sqrt(s) + self.eps)
            if self.weight_decay and name in self.decay_names:
                update = update + self.lr * self.weight_decay * t.data
            t.data = (t.data - update).astype(t.dtype)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None


class EarlyStopper:
    """Stop after exactly `patience` consecutive non-improving updates."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.stale = 0

    def update(self, value: float) -> bool:
        if value > self.best:
            self.best = value
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


def dice_iou(mask: np.ndarray, pred: np.ndarray, threshold: float = 0.5):
    hard = (pred >= threshold).astype(np.float64)
    inter = float((hard * mask).sum())
    sy, sp = float(mask.sum()), float(hard.sum())
    dice = (2 * inter + DICE_EPS) / (sy + sp + DICE_EPS)
    iou = (inter + DICE_EPS) / (sy + sp - inter + DICE_EPS)
    return dice, iou


def split_by_stem_hash(samples, val_fraction: float = 0.2):
    """Deterministic 80/20 split by a stable hash of the sorted stems."""
    import hashlib

    train, val = [], []
    mod = max(2, int(round(1.0 / val_fraction)))
    for s in sorted(samples, key=lambda s: s.id):
        h = int(hashlib.md5(s.id.encode()).hexdigest(), 16)
        (val if h % mod == 0 else train).append(s)
    if not val and samples:
        val = [train.pop()]
    return train, val


def _batches(items, size):
    for i in range(0, len(items), size):
        yield items[i : i + size]


def _stack_images(samples, dtype):
    return Tensor(np.stack([s.image for s in samples]).astype(dtype))


def evaluate(model: SegModel, samples, threshold: float = 0.5, weights: L.LossWeights | None = None,
             cfg: TrainConfig | None = None, batch_size: int = 4) -> MetricsRow:
    """Hard Dice/IoU at the threshold plus loss diagnostics, averaged over samples."""
    t0 = time.perf_counter()
    weights = weights or L.LossWeights()
    dices, ious, totals = [], [], []
    comp_sums: dict = {}
    bbw = cfg.boundary_bce_weight if cfg else L.DEFAULT_BOUNDARY_BCE_WEIGHT
    mode = cfg.loss_mode if cfg else "adaptive"
    for chunk in _batches(samples, batch_size):
        x = _stack_images(chunk, model.cfg.np_dtype)
        p, _ = model.forward(x, train=False)
        for i, s in enumerate(chunk):
            pred = p.data[i, 0]
            d, j = dice_iou(s.mask, pred, threshold)
            dices.append(d)
            ious.append(j)
            pt = Tensor(np.clip(pred, 0.0, 1.0), dtype=model.cfg.np_dtype)
            total, comps = L.batch_loss([s.mask.astype(np.float64)], [pt], weights, mode, bbw)
            totals.append(float(total.data))
            for k, v in comps.items():
                comp_sums[k] = comp_sums.get(k, 0.0) + v
    n = max(1, len(samples))
    comp = {k: v / n for k, v in comp_sums.items()}
    wd = weights.as_dict()
    return MetricsRow(
        epoch=-1, split="val", dice=float(np.mean(dices)) if dices else 0.0,
        iou=float(np.mean(ious)) if ious else 0.0,
        loss_total=float(np.mean(totals)) if totals else 0.0,
        loss_core=comp.get("core", float("nan")), loss_bnd=comp.get("bnd", float("nan")),
        loss_str=comp.get("str", float("nan")), loss_sca=comp.get("sca", float("nan")),
        loss_tex=comp.get("tex", float("nan")),
        w_core=wd["core"], w_bnd=wd["bnd"], w_str=wd["str"], w_sca=wd["sca"], w_tex=wd["tex"],
        wall_ms=(time.perf_counter() - t0) * 1e3,
    )


def train(model: SegModel, train_samples, val_samples, cfg: TrainConfig, on_epoch=None):
    """Optimize model parameters and loss weights jointly.

    Returns (best_state_arrays, history). best corresponds to the highest
    validation Dice seen at an evaluation point.
    """
    if not train_samples or not val_samples:
        raise ConfigError("train() needs non-empty train and val splits")
    from .data import augment as augment_fn

    weights = L.LossWeights(dtype=np.float64)
    params = dict(model.named_params())
    params.update(dict(weights.named_params()))
    opt = RMSprop(params, lr=cfg.lr, smoothing=cfg.rms_smoothing, eps=cfg.rms_eps,
                  weight_decay=cfg.weight_decay, decay_names=model.decay_param_names())
    stopper = EarlyStopper(cfg.early_stop_patience)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.epochs + 1)
    history: list[MetricsRow] = []
    best_state = None
    best_dice = -np.inf
    step = 0
    last_finite = None

    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(seeds[epoch])
        pool = []
        for s in train_samples:
            for _ in range(cfg.augment_multiplier):
                pool.append(augment_fn(s, rng) if cfg.augment else s)
        order = rng.permutation(len(pool))
        t0 = time.perf_counter()
        epoch_totals, epoch_comps = [], {}
        for batch_idx in _batches(list(order), cfg.batch_size):
            batch = [pool[i] for i in batch_idx]
            x = _stack_images(batch, model.cfg.np_dtype)
            with Tape() as tape:
                p, _ = model.forward(x, train=True, rng=rng)
                preds = [ops.clamp(ops.slice_(p, (i, 0)), 0.0, 1.0) for i in range(len(batch))]
                masks = [b.mask.astype(np.float64) for b in batch]
                try:
                    total, comps = L.batch_loss(masks, preds, weights, cfg.loss_mode,
                                                cfg.boundary_bce_weight)
                except NonFiniteError as exc:
                    raise NumericError(f"non-finite loss at step {step}: {exc}",
                                       step=step, last_metrics=last_finite) from exc
                if not np.isfinite(total.data):
                    raise NumericError(f"NaN loss at step {step}", step=step,
                                       last_metrics=last_finite)
                tape.backward(total)
            names = [n for n, t in params.items() if t.grad is not None]
            try:
                clipped, _ = clip_grad_norm([params[n].grad for n in names], cfg.grad_clip_norm)
            except NonFiniteError as exc:
                raise NumericError(f"non-finite gradients at step {step}", step=step,
                                   last_metrics=last_finite) from exc
            opt.step(dict(zip(names, clipped)))
            L.clip_weights(weights)
            opt.zero_grad()
            epoch_totals.append(float(total.data))
            for k, v in comps.items():
                epoch_comps[k] = epoch_comps.get(k, 0.0) + v
            step += 1
        nb = max(1, len(epoch_totals))
        wd = weights.as_dict()
        train_row = MetricsRow(
            epoch=epoch, split="train", dice=float("nan"), iou=float("nan"),
            loss_total=float(np.mean(epoch_totals)),
            loss_core=epoch_comps.get("core", float("nan")) / nb,
            loss_bnd=epoch_comps.get("bnd", float("nan")) / nb,
            loss_str=epoch_comps.get("str", float("nan")) / nb,
            loss_sca=epoch_comps.get("sca", float("nan")) / nb,
            loss_tex=epoch_comps.get("tex", float("nan")) / nb,
            w_core=wd["core"], w_bnd=wd["bnd"], w_str=wd["str"], w_sca=wd["sca"], w_tex=wd["tex"],
            wall_ms=(time.perf_counter() - t0) * 1e3,
        )
        history.append(train_row)
        last_finite = train_row

        if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            row = evaluate(model, val_samples, weights=weights, cfg=cfg,
                           batch_size=cfg.batch_size)
            row.epoch = epoch
            history.append(row)
            if on_epoch:
                on_epoch(epoch, row)
            if row.dice > best_dice:
                best_dice = row.dice
                best_state = model.state_arrays()
                best_state = {k: np.array(v, copy=True) for k, v in best_state.items()}
                for name, t in weights.named_params():
                    best_state[name] = np.array(t.data, copy=True)
            if stopper.update(row.dice):
                break

    if best_state is None:
        best_state = model.state_arrays()
    return best_state, history
