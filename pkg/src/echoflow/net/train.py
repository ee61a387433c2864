"""Training loop, clip-averaged scan prediction and model ensembling.

Each epoch draws one random clip per training scan (start indices
shared between the grayscale and flow streams so the two stay
temporally aligned), applies the optional shared-geometry
augmentation, and optimizes the class-weighted BCE with AdamW.  Early
stopping watches the configured monitor (training loss by default)
and the best-monitored weights are restored at the end.

Everything is driven by named seed streams, so a fixed seed makes the
final weights bit-reproducible.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from ..augment import AugmentParams, random_augment
from ..errors import DegenerateInputError, ManifestError
from ..flow import flow_to_input
from ..manifest import Manifest
from ..video import Clip, VideoTensor, load_video
from .loss import LossBatch, bce_logit_grad, class_weights, weighted_bce
from .model import ModelConfig, TwoStreamModel, clips_to_batch
from .optim import AdamW

HISTORY_FIELDS = ["epoch", "train_loss", "val_loss", "val_auc"]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    lr: float = 1e-5
    patience: int = 5
    monitor: str = "train"  # train | val
    weight_decay: float = 0.01
    seed: int = 0
    clip_len: int = 32
    n_eval_clips: int = 5

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.patience, self.clip_len,
               self.n_eval_clips) < 1 or self.lr <= 0:
            raise ValueError("all training constants must be positive")
        if self.patience > self.epochs:
            raise ValueError("patience must not exceed epochs")
        if self.monitor not in ("train", "val"):
            raise ValueError(f"monitor must be train|val; got {self.monitor!r}")


def _rng(seed, *tags) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(seed),) + tuple(tags)))


class _ScanStore:
    """In-memory cache of per-scan gray videos and raw flow stacks."""

    def __init__(self, rows, root=None):
        if not rows:
            raise ManifestError("split is empty")
        self.rows = list(rows)
        self.gray: dict[str, np.ndarray] = {}
        self.flowstack: dict[str, np.ndarray] = {}
        for r in self.rows:
            vpath = os.path.join(root, r.video_path) if root else r.video_path
            fpath = os.path.join(root, r.flow_path) if root else r.flow_path
            self.gray[r.scan_id] = load_video(vpath).data
            self.flowstack[r.scan_id] = load_video(fpath).data

    def clip_pair(self, scan_id, start, clip_len):
        gray = self.gray[scan_id][start : start + clip_len]
        fields = self.flowstack[scan_id][start : start + clip_len - 1]
        flow = flow_to_input(list(fields), clip_len)
        return gray, flow.data

    def max_start(self, scan_id, clip_len) -> int:
        t = self.gray[scan_id].shape[0]
        if t < clip_len:
            raise DegenerateInputError(
                f"scan {scan_id}: {t} frames < clip_len {clip_len}"
            )
        return t - clip_len


def _epoch_batches(store, order, cfg, epoch, augment, model_streams):
    """Yield (gray_batch, flow_batch, labels) with deterministic draws."""
    start_rng = _rng(cfg.seed, 0xC11F, epoch)
    for lo in range(0, len(order), cfg.batch_size):
        chunk = order[lo : lo + cfg.batch_size]
        grays, flows, labels = [], [], []
        for j, row in enumerate(chunk):
            smax = store.max_start(row.scan_id, cfg.clip_len)
            start = int(start_rng.integers(0, smax + 1))
            gray, flow = store.clip_pair(row.scan_id, start, cfg.clip_len)
            if augment is not None:
                aug_rng = _rng(cfg.seed, 0xA7, epoch, lo + j)
                clip, flow_t = random_augment(
                    Clip(VideoTensor(gray), row.scan_id, start),
                    VideoTensor(flow), augment, aug_rng)
                gray, flow = clip.video.data, flow_t.data
            grays.append(gray)
            flows.append(flow)
            labels.append(row.label)
        gray_b = clips_to_batch(grays) if model_streams in ("both", "gray") else None
        flow_b = clips_to_batch(flows) if model_streams in ("both", "flow") else None
        yield gray_b, flow_b, np.asarray(labels, dtype=np.float64)


def _eval_split(model, store, rows, cfg, weights_by_class):
    """Deterministic center-clip loss and AUC over a split."""
    from .. import stats

    labels, probs = [], []
    loss_sum = 0.0
    streams = model.config.streams
    for lo in range(0, len(rows), cfg.batch_size):
        chunk = rows[lo : lo + cfg.batch_size]
        grays, flows = [], []
        for row in chunk:
            start = store.max_start(row.scan_id, cfg.clip_len) // 2
            gray, flow = store.clip_pair(row.scan_id, start, cfg.clip_len)
            grays.append(gray)
            flows.append(flow)
        gray_b = clips_to_batch(grays) if streams in ("both", "gray") else None
        flow_b = clips_to_batch(flows) if streams in ("both", "flow") else None
        p, _ = model.forward(gray_b, flow_b, train=False)
        y = np.asarray([r.label for r in chunk], dtype=np.float64)
        w = np.asarray([weights_by_class[r.label] for r in chunk])
        loss, _ = weighted_bce(LossBatch(y, p, w))
        loss_sum += loss * len(chunk)
        labels.extend(int(r.label) for r in chunk)
        probs.extend(float(v) for v in p)
    auc = np.nan
    if len(set(labels)) == 2:
        samples = [stats.ScoredSample(p, l, str(i), str(i))
                   for i, (p, l) in enumerate(zip(probs, labels))]
        auc = stats.auc_trapezoid(stats.roc_curve(samples))
    return loss_sum / len(rows), auc


def train(manifest: Manifest, model_config: ModelConfig, cfg: TrainConfig,
          augment: AugmentParams = None, root=None, model=None):
    """Train a model on the manifest's train split.

    Returns ``(model, history)`` where history holds one dict per epoch
    with keys epoch/train_loss/val_loss/val_auc.  The model keeps the
    best-monitored weights, not necessarily the final ones.
    """
    train_rows = list(manifest.subset("train").rows)
    val_rows = list(manifest.subset("val").rows)
    if not train_rows:
        raise ManifestError("manifest has no train split")
    wts = class_weights([r.label for r in train_rows])

    store = _ScanStore(train_rows + val_rows, root=root)
    if model is None:
        model = TwoStreamModel(model_config, seed=cfg.seed)
    optimizer = AdamW(weight_decay=cfg.weight_decay)

    history = []
    best_monitor = np.inf
    best_state = model.state_dict()
    bad_epochs = 0

    for epoch in range(1, cfg.epochs + 1):
        order = list(train_rows)
        _rng(cfg.seed, 0x5F, epoch).shuffle(order)
        loss_sum = 0.0
        n_seen = 0
        for gray_b, flow_b, labels in _epoch_batches(
                store, order, cfg, epoch, augment, model_config.streams):
            probs, _ = model.forward(gray_b, flow_b, train=True)
            w = np.asarray([wts[int(l)] for l in labels])
            loss, _ = weighted_bce(LossBatch(labels, probs, w))
            dlogit = bce_logit_grad(labels, probs, w)
            model.backward(dlogit)
            optimizer.step(model.named_params(), model.named_grads(), cfg.lr)
            loss_sum += loss * labels.size
            n_seen += labels.size
        train_loss = loss_sum / n_seen

        val_loss, val_auc = (np.nan, np.nan)
        if val_rows:
            val_loss, val_auc = _eval_split(model, store, val_rows, cfg, wts)
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_loss": val_loss, "val_auc": val_auc})

        monitor = train_loss if cfg.monitor == "train" else val_loss
        if cfg.monitor == "val" and not val_rows:
            raise ManifestError("monitor=val requires a val split")
        if monitor < best_monitor:
            best_monitor = monitor
            best_state = model.state_dict()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break

    model.load_state(best_state)
    return model, history


def write_history(path, history) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in HISTORY_FIELDS})


def _scan_batch(gray_video, flow_video, starts, clip_len, streams):
    gray = gray_video.data if isinstance(gray_video, VideoTensor) else np.asarray(gray_video)
    grays, flows = [], []
    for s in starts:
        grays.append(gray[s : s + clip_len])
        if streams in ("both", "flow"):
            stack = flow_video.data if isinstance(flow_video, VideoTensor) else np.asarray(flow_video)
            flows.append(flow_to_input(list(stack[s : s + clip_len - 1]), clip_len).data)
    gray_b = clips_to_batch(grays) if streams in ("both", "gray") else None
    flow_b = clips_to_batch(flows) if streams in ("both", "flow") else None
    return gray_b, flow_b


def predict_scan(model, gray_video, flow_video, n_clips=5, clip_len=32, seed=0) -> float:
    """Average the model over random clips of one scan.

    Clip starts are drawn from the seed and shared across streams; the
    result is the arithmetic mean of the per-clip outputs.
    """
    gray = gray_video.data if isinstance(gray_video, VideoTensor) else np.asarray(gray_video)
    t = gray.shape[0]
    if t < clip_len:
        raise DegenerateInputError(f"scan has {t} frames < clip_len {clip_len}")
    rng = _rng(seed, 0x9E)
    starts = [int(s) for s in rng.integers(0, t - clip_len + 1, size=n_clips)]
    gray_b, flow_b = _scan_batch(gray_video, flow_video, starts, clip_len,
                                 model.config.streams)
    probs, _ = model.forward(gray_b, flow_b, train=False)
    return float(np.mean(probs))


def ensemble_predict(models, gray_video, flow_video, n_clips=5, clip_len=32, seed=0) -> float:
    """Mean of per-model clip-averaged predictions."""
    if not models:
        raise ValueError("ensemble requires at least one model")
    return float(np.mean([
        predict_scan(m, gray_video, flow_video, n_clips=n_clips,
                     clip_len=clip_len, seed=seed)
        for m in models
    ]))
