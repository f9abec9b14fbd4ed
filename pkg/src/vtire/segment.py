"""FCN-style binary segmentation of the tactile crop.

Three conv/relu/pool stages shrink an 88x88 crop to 11x11; 1x1 score convs
produce two-channel logits (background, contact) that are brought back to
full size by fixed bilinear upsampling and summed with skip scores from the
earlier stages. In crack mode everything outside the tactile disk is masked:
the input is zeroed there and those pixels are excluded from loss and metrics,
so the loss cannot depend on them at all.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import label

from .errors import ConfigError, DataError, DimensionError
from .nn import Adam, BilinearUpsample, Conv2d, Layer, MaxPool2, ReLU, softmax
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .synth import FrameGeometry, derive_seed, empty_imprint, gen_crack, gen_object_imprint
from .synth.objects import OBJECT_KINDS
from .synth.rng import stream

log = logging.getLogger(__name__)

SEG_MODES = ("object", "crack")


@dataclass(frozen=True)
class SegConfig:
    mode: str = "object"
    widths: tuple = (8, 16, 32)
    skips: tuple = (1, 2)  # stages whose pooled features feed a skip score
    lr: float = 2e-3
    batch: int = 8
    epochs: int = 60
    seed: int = 0
    pos_weight: float = 1.0  # loss weight of contact pixels
    precision: str = "single"

    def __post_init__(self):
        if self.mode not in SEG_MODES:
            raise ConfigError(f"segmentation mode must be one of {SEG_MODES}")
        if len(self.widths) != 3 or not set(self.skips) <= {1, 2}:
            raise ConfigError("three stage widths and skips from stages 1 and/or 2 are supported")
        if self.precision not in ("single", "double"):
            raise ConfigError("precision must be 'single' or 'double'")
        if self.pos_weight <= 0:
            raise ConfigError("pos_weight must be positive")

    @property
    def dtype(self):
        return np.float32 if self.precision == "single" else np.float64


def _nchw(x):
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


def _nhwc(x):
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


class SegModel(Layer):
    """``forward(images (N, H, W) in [0, 1]) -> logits (N, 2, H, W)``.

    H and W must be divisible by 8.
    """

    def __init__(self, config: SegConfig = SegConfig(), geometry: FrameGeometry = FrameGeometry()):
        super().__init__()
        self.config = config
        self.geometry = geometry
        rng = stream(config.seed, "segmodel")
        dt = config.dtype
        c_in = 1
        for s, width in enumerate(config.widths, start=1):
            self.sublayers[f"conv{s}"] = Conv2d(c_in, width, 3, rng=rng, dtype=dt, layout="NHWC")
            self.sublayers[f"relu{s}"] = ReLU()
            self.sublayers[f"pool{s}"] = MaxPool2(channels_last=True)
            c_in = width
        self.sublayers["score3"] = Conv2d(c_in, 2, 1, rng=rng, dtype=dt, layout="NHWC")
        for s in config.skips:
            self.sublayers[f"score{s}"] = Conv2d(config.widths[s - 1], 2, 1, rng=rng, dtype=dt,
                                                 layout="NHWC")
        self._up2 = [BilinearUpsample(2) for _ in range(3)]
        self._input_mask = None
        if config.mode == "crack":
            self._input_mask = geometry.disk_mask()

    @property
    def input_grad(self):
        return self.sublayers["conv1"].input_grad

    @input_grad.setter
    def input_grad(self, flag):
        self.sublayers["conv1"].input_grad = bool(flag)

    def prepare(self, images):
        """Scale uint8 crops to [0, 1] and apply the crack-mode disk mask."""
        x = np.asarray(images, dtype=self.config.dtype)
        if np.issubdtype(np.asarray(images).dtype, np.integer):
            x = x / self.config.dtype(255.0)
        if self._input_mask is not None:
            if x.shape[-2:] != self._input_mask.shape:
                raise DimensionError(f"crack mode expects {self._input_mask.shape} crops, got {x.shape}")
            x = np.where(self._input_mask, x, 0).astype(self.config.dtype)
        return x

    def forward(self, images):
        x = np.asarray(images)
        if x.ndim == 2:
            x = x[None]
        n, h, w = x.shape
        if h % 8 or w % 8:
            raise DimensionError(f"segmentation input must be divisible by 8, got {x.shape}")
        if self._input_mask is not None and x.shape[1:] == self._input_mask.shape:
            x = np.where(self._input_mask, x, 0).astype(x.dtype)
        s = self.sublayers
        feats = {}
        y = x[..., None]
        for k in (1, 2, 3):
            y = s[f"pool{k}"].forward(s[f"relu{k}"].forward(s[f"conv{k}"].forward(y)))
            feats[k] = y
        score = _nchw(s["score3"].forward(feats[3]))
        # 11 -> 22 -> 44 -> 88 with skip scores added at their own resolution
        for i, k in enumerate((2, 1)):
            score = self._up2[i].forward(score)
            if k in self.config.skips:
                score = score + _nchw(s[f"score{k}"].forward(feats[k]))
        out = self._up2[2].forward(score)
        return out

    def backward(self, dlogits):
        s = self.sublayers
        d = self._up2[2].backward(dlogits)
        dfeat = {}
        for i, k in reversed(list(enumerate((2, 1)))):
            if k in self.config.skips:
                dfeat[k] = s[f"score{k}"].backward(_nhwc(d))
            d = self._up2[i].backward(d)
        dy = s["score3"].backward(_nhwc(d))
        for k in (3, 2, 1):
            if k in dfeat:
                dy = dy + dfeat[k]
            dy = s[f"conv{k}"].backward(s[f"relu{k}"].backward(s[f"pool{k}"].backward(dy)))
            if dy is None:
                return None
        return dy[..., 0]

    def save(self, path, extra=None):
        meta = {"kind": "segmodel", "config": asdict(self.config), **(extra or {})}
        return save_checkpoint(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path):
        tensors, meta = load_checkpoint(path)
        cfg = dict(meta["config"])
        cfg["widths"], cfg["skips"] = tuple(cfg["widths"]), tuple(cfg["skips"])
        model = cls(SegConfig(**cfg))
        model.load_state_dict(tensors)
        return model


def seg_forward(images, model: SegModel):
    """Per-pixel class probabilities ``(N, 2, H, W)``; channel 1 is contact."""
    return softmax(model.forward(model.prepare(images)), axis=1)


def valid_region(model_or_mode, shape, geometry: FrameGeometry = FrameGeometry()):
    mode = model_or_mode.config.mode if isinstance(model_or_mode, SegModel) else model_or_mode
    if mode == "crack":
        return geometry.disk_mask()
    return np.ones(shape, dtype=bool)


def seg_loss(logits, masks, valid, pos_weight=1.0):
    """Mean per-pixel cross-entropy over ``valid`` pixels; returns ``(loss, dlogits)``."""
    logits = np.asarray(logits)
    masks = np.asarray(masks, dtype=bool)
    if logits.shape[0] != masks.shape[0] or logits.shape[2:] != masks.shape[1:]:
        raise DataError(f"logits {logits.shape} and masks {masks.shape} are misaligned")
    valid = np.broadcast_to(valid, masks.shape)
    w = np.where(masks, pos_weight, 1.0) * valid
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    target = masks.astype(np.int64)
    picked = np.take_along_axis(logp, target[:, None], axis=1)[:, 0]
    total = max(float(w.sum()), 1.0)
    loss = float(-(w * picked).sum() / total)
    grad = np.exp(logp)
    grad[:, 1] -= masks
    grad[:, 0] -= ~masks
    grad *= (w / total)[:, None]
    return loss, grad.astype(logits.dtype)


def seg_metrics(pred_mask, true_mask, valid=None):
    """Pixel accuracy and IoU of the contact class over ``valid`` pixels.

    IoU of two empty masks is 1.0.
    """
    pred = np.asarray(pred_mask, dtype=bool)
    true = np.asarray(true_mask, dtype=bool)
    if pred.shape != true.shape:
        raise DataError(f"mask shapes differ: {pred.shape} vs {true.shape}")
    v = np.ones(pred.shape, dtype=bool) if valid is None else np.broadcast_to(valid, pred.shape)
    p, t = pred & v, true & v
    n = int(v.sum())
    pixel_acc = float(((pred == true) & v).sum() / n) if n else 1.0
    union = int((p | t).sum())
    iou = float((p & t).sum() / union) if union else 1.0
    return {"pixel_acc": pixel_acc, "iou": iou}


def predict_masks(model, images, chunk=32):
    images = np.asarray(images)
    out = []
    for i in range(0, len(images), chunk):
        out.append(seg_forward(images[i:i + chunk], model)[:, 1] >= 0.5)
    return np.concatenate(out) if out else np.zeros(images.shape, dtype=bool)


def evaluate_seg(model, images, masks):
    pred = predict_masks(model, images)
    valid = valid_region(model, pred.shape[1:], model.geometry)
    return seg_metrics(pred, masks, valid)


@dataclass
class SegResult:
    model: SegModel
    history: list = field(default_factory=list)

    def summary(self):
        last = self.history[-1]
        return {"mode": self.model.config.mode, "seed": self.model.config.seed,
                "epochs": last["epoch"], "pixel_acc": last.get("eval_pixel_acc", last["pixel_acc"]),
                "iou": last.get("eval_iou", last["iou"]), "threshold": 0.5}


def train_seg(images, masks, config: SegConfig = SegConfig(), eval_images=None, eval_masks=None,
              geometry: FrameGeometry = FrameGeometry(), progress=None):
    """Adam on per-pixel cross-entropy; training and held-out metrics every epoch."""
    images = np.asarray(images)
    masks = np.asarray(masks, dtype=bool)
    if images.shape != masks.shape:
        raise DataError(f"images {images.shape} and masks {masks.shape} are misaligned")
    model = SegModel(config, geometry)
    model.input_grad = False
    opt = Adam(model, lr=config.lr)
    x_all = model.prepare(images)
    valid = valid_region(model, images.shape[1:], geometry)
    n = len(images)
    history = []
    for epoch in range(1, config.epochs + 1):
        order = stream(config.seed, "seg-shuffle", epoch).permutation(n)
        total = 0.0
        for i in range(0, n, config.batch):
            idx = order[i:i + config.batch]
            logits = model.forward(x_all[idx])
            loss, dlogits = seg_loss(logits, masks[idx], valid, config.pos_weight)
            model.backward(dlogits)
            opt.step()
            total += loss * len(idx)
        rec = {"epoch": epoch, "loss": total / max(n, 1), **evaluate_seg(model, images, masks)}
        if eval_images is not None:
            ev = evaluate_seg(model, eval_images, eval_masks)
            rec.update(eval_pixel_acc=ev["pixel_acc"], eval_iou=ev["iou"])
        history.append(rec)
        log.info("seg epoch %d %s", epoch, rec)
        if progress:
            progress(rec)
    return SegResult(model, history)


# ---------------------------------------------------------------------------
# datasets for the two tasks

def object_seg_data(n_per_kind, seed, n_empty=None, geometry: FrameGeometry = FrameGeometry()):
    """Object imprints of every kind plus empty frames: ``(images, masks)``."""
    imgs, masks = [], []
    for k, kind in enumerate(OBJECT_KINDS):
        for i in range(n_per_kind):
            o = gen_object_imprint(kind, derive_seed(seed, "objseg", kind, i), geometry)
            imgs.append(o["image"])
            masks.append(o["mask"])
    for i in range(n_per_kind if n_empty is None else n_empty):
        e = empty_imprint(derive_seed(seed, "objseg-empty", i), geometry)
        imgs.append(e["image"])
        masks.append(e["mask"])
    return np.stack(imgs), np.stack(masks)


def crack_seg_data(n, seed, width_range=(0.15, 0.8), geometry: FrameGeometry = FrameGeometry()):
    rng = stream(seed, "crackseg-widths")
    imgs, masks = [], []
    for i in range(n):
        c = gen_crack(float(rng.uniform(*width_range)), derive_seed(seed, "crackseg", i), geometry)
        imgs.append(c["image"])
        masks.append(c["mask"])
    return np.stack(imgs), np.stack(masks)


# ---------------------------------------------------------------------------
# protocols

@dataclass
class Detection:
    fired: bool
    area: int
    mask: np.ndarray


def search_objects(frames, model: SegModel, threshold):
    """Per-frame verdicts: a detection fires when the predicted contact area
    reaches ``threshold`` pixels."""
    frames = np.asarray(frames)
    if frames.ndim == 2:
        frames = frames[None]
    masks = predict_masks(model, frames)
    return [Detection(bool(m.sum() >= threshold), int(m.sum()), m) for m in masks]


def object_search_protocol(model, n_trials=50, frames_per_trial=8, threshold=40, seed=0,
                           iou_min=0.5, geometry: FrameGeometry = FrameGeometry()):
    """Rolling-search trials: empty frames with one object frame at a random
    position. A trial succeeds when the object frame fires with IoU >= ``iou_min``
    and no empty frame fires."""
    trials = []
    for t in range(n_trials):
        rng = stream(seed, "search", t)
        kind = OBJECT_KINDS[t % len(OBJECT_KINDS)]
        at = int(rng.integers(frames_per_trial))
        frames, truth = [], None
        for f in range(frames_per_trial):
            if f == at:
                o = gen_object_imprint(kind, derive_seed(seed, "search-obj", t), geometry)
                frames.append(o["image"])
                truth = o["mask"]
            else:
                frames.append(empty_imprint(derive_seed(seed, "search-empty", t, f), geometry)["image"])
        dets = search_objects(np.stack(frames), model, threshold)
        false_fires = sum(d.fired for i, d in enumerate(dets) if i != at)
        hit = dets[at]
        iou = seg_metrics(hit.mask, truth)["iou"]
        ok = hit.fired and iou >= iou_min and false_fires == 0
        trials.append({"trial": t, "kind": kind, "position": at, "fired": hit.fired,
                       "iou": iou, "false_fires": false_fires, "success": bool(ok)})
    return {"successes": int(sum(tr["success"] for tr in trials)), "trials": n_trials,
            "threshold": threshold, "per_trial": trials}


def crack_detected(pred_mask, true_mask, iou_min=0.3):
    """True when some 8-connected predicted component overlaps the truth with IoU >= iou_min."""
    lab, n = label(pred_mask, structure=np.ones((3, 3)))
    for k in range(1, n + 1):
        if seg_metrics(lab == k, true_mask)["iou"] >= iou_min:
            return True
    return False


def probe_resolution(model, widths_mm=(0.5, 0.4, 0.3, 0.25, 0.2), n_seeds=10, min_hits=8,
                     iou_min=0.3, seed=0, geometry: FrameGeometry = FrameGeometry()):
    """Scan descending widths; stop at the first width not detected.

    Returns the smallest detected width (None if the widest already fails)
    and per-width hit counts for every scanned width.
    """
    widths = [float(w) for w in widths_mm]
    if any(w <= 0 for w in widths) or any(a <= b for a, b in zip(widths, widths[1:])):
        raise ValueError("probe widths must be positive and strictly descending")
    smallest, per_width = None, []
    for w in widths:
        imgs, truths = [], []
        for i in range(n_seeds):
            c = gen_crack(w, derive_seed(seed, "probe", w, i), geometry)
            imgs.append(c["image"])
            truths.append(c["mask"])
        preds = predict_masks(model, np.stack(imgs))
        hits = sum(crack_detected(p, t, iou_min) for p, t in zip(preds, truths))
        detected = hits >= min_hits
        per_width.append({"width_mm": w, "hits": int(hits), "n_seeds": n_seeds, "detected": bool(detected)})
        if not detected:
            break
        smallest = w
    return {"smallest_detected_mm": smallest, "per_width": per_width,
            "floor_note": "anti-aliased rendering: cracks narrower than half a pixel have an empty ground-truth mask"}
