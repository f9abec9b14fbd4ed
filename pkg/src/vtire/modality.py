"""Modality sets, 16x16 fragmenting and per-modality feature encoders.

A mode names which images feed the classifier and in which order:

====  ==========================================
TO    tactile
VO    visual
RVT   raw (whole frame, one modality)
SVT   tactile, visual
EVO   external
EVT   external, tactile
EVVT  external, visual, tactile
====  ==========================================

The order is part of the checkpoint contract and must not change.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError
from .nn import Conv2d, Flatten, Layer, LayerNorm, Linear, MaxPool2, ReLU, Sequential
from .synth.geometry import FrameGeometry
from .synth.rng import stream

MODES = {
    "TO": ("tactile",),
    "VO": ("visual",),
    "RVT": ("raw",),
    "SVT": ("tactile", "visual"),
    "EVO": ("external",),
    "EVT": ("external", "tactile"),
    "EVVT": ("external", "visual", "tactile"),
}
PATCH = 16


def modalities_for(mode):
    try:
        return MODES[mode]
    except KeyError:
        raise ValueError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}") from None


def segment_regions(raw_frame, geometry: FrameGeometry = FrameGeometry()):
    """Split a raw frame into the tactile crop (outside-disk pixels zeroed) and
    the two side panels placed side by side."""
    raw_frame = np.asarray(raw_frame)
    geometry.check_frame(raw_frame)
    r0, r1, c0, c1 = geometry.disk_box
    tactile = raw_frame[r0:r1, c0:c1].copy()
    tactile[~geometry.disk_mask()] = 0
    left, right = geometry.panel_slices()
    visual = np.concatenate([raw_frame[left], raw_frame[right]], axis=1)
    return tactile, visual


def pad_to_multiple(image, patch=PATCH):
    h, w = image.shape[-2:]
    ph, pw = (-h) % patch, (-w) % patch
    if not (ph or pw):
        return image
    pad = [(0, 0)] * (image.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(image, pad, mode="edge")


def n_fragments(shape, patch=PATCH):
    h, w = shape
    return -(-h // patch) * -(-w // patch)


def patchify(image, patch=PATCH):
    """Row-major non-overlapping patches, ``(..., K, patch*patch)``."""
    img = pad_to_multiple(np.asarray(image), patch)
    *lead, H, W = img.shape
    p = img.reshape(*lead, H // patch, patch, W // patch, patch)
    p = np.moveaxis(p, -3, -2)
    return p.reshape(*lead, (H // patch) * (W // patch), patch * patch)


def unpatchify(fragments, shape, patch=PATCH):
    """Inverse of :func:`patchify` for the padded image of ``shape``."""
    H, W = (-(-shape[0] // patch) * patch, -(-shape[1] // patch) * patch)
    *lead, K, _ = fragments.shape
    p = fragments.reshape(*lead, H // patch, W // patch, patch, patch)
    p = np.moveaxis(p, -2, -3)
    return p.reshape(*lead, H, W)


def normalize_image(image):
    """Per-image min-max scaling to [0, 1]; a constant image maps to zeros."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi = img.min(), img.max()
    if hi <= lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def modality_images(sample, mode, geometry: FrameGeometry = FrameGeometry()):
    """The uint8 image for each modality of ``mode`` (in mode order)."""
    out = {}
    for m in modalities_for(mode):
        if m == "raw":
            out[m] = sample.raw_frame
        elif m == "tactile":
            out[m] = sample.tactile_crop if sample.tactile_crop is not None else \
                segment_regions(sample.raw_frame, geometry)[0]
        elif m == "visual":
            out[m] = sample.visual_crop if sample.visual_crop is not None else \
                segment_regions(sample.raw_frame, geometry)[1]
        elif m == "external":
            if sample.external_image is None:
                raise DataError(f"mode {mode} needs an external image but sample {sample.seed} has none")
            out[m] = sample.external_image
    return out


def fragments_for(image, dtype=np.float64, norm="minmax"):
    """Fragments of one image scaled to [0, 1].

    ``norm="minmax"`` stretches each image to its own range (the default);
    ``norm="unit"`` divides by 255 and keeps absolute brightness, which a
    constant image needs to stay distinguishable from another constant image.
    """
    if norm == "minmax":
        scaled = normalize_image(image)
    elif norm == "unit":
        scaled = np.asarray(image, dtype=np.float64) / 255.0
    else:
        raise ValueError(f"unknown normalisation {norm!r}")
    return patchify(scaled).astype(dtype)


class ModalityEncoder(Layer):
    """Fragment encoder followed by LayerNorm: ``LayerNorm(E(fragment))``.

    ``conv3x3(8)-relu-pool-conv3x3(16)-relu-pool-flatten-linear(d)`` shared
    across the fragments of one modality.
    """

    def __init__(self, d=64, patch=PATCH, rng=None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d, self.patch = d, patch
        flat = 16 * (patch // 4) ** 2
        self.sublayers["net"] = Sequential(
            Conv2d(1, 8, 3, rng=rng, dtype=dtype, layout="NHWC"), ReLU(), MaxPool2(channels_last=True),
            Conv2d(8, 16, 3, rng=rng, dtype=dtype, layout="NHWC"), ReLU(), MaxPool2(channels_last=True),
            Flatten(), Linear(flat, d, rng=rng, dtype=dtype))
        self.sublayers["norm"] = LayerNorm(d, dtype=dtype)

    def forward(self, fragments):
        """``(..., K, patch*patch)`` -> ``(..., K, d)``."""
        fragments = np.asarray(fragments)
        if fragments.shape[-1] != self.patch * self.patch:
            raise DimensionError(
                f"encoder expects fragments of {self.patch * self.patch} values, got {fragments.shape}")
        lead = fragments.shape[:-1]
        x = fragments.reshape(-1, self.patch, self.patch, 1)
        self._lead = lead
        y = self.sublayers["net"].forward(x)
        return self.sublayers["norm"].forward(y).reshape(*lead, self.d)

    def backward(self, dy):
        d2 = dy.reshape(-1, self.d)
        d2 = self.sublayers["norm"].backward(d2)
        dx = self.sublayers["net"].backward(d2)
        return None if dx is None else dx.reshape(*self._lead, self.patch * self.patch)

    @property
    def input_grad(self):
        return self.sublayers["net"].sublayers["0"].input_grad

    @input_grad.setter
    def input_grad(self, flag):
        """Training never needs d(loss)/d(fragment); switching it off skips a col2im."""
        self.sublayers["net"].sublayers["0"].input_grad = bool(flag)


def make_encoders(mode, d=64, seed=0, dtype=np.float64):
    return {m: ModalityEncoder(d, rng=stream(seed, "encoder", m), dtype=dtype)
            for m in modalities_for(mode)}


def encode_modality(fragments, encoder: ModalityEncoder):
    return encoder.forward(fragments)


@dataclass
class ModalityBundle:
    features: list  # one (K_i, d) array per modality
    modalities: tuple
    counts: tuple
    d: int

    @property
    def n_tokens(self):
        return int(sum(self.counts))


def build_bundle(sample, mode, encoders, geometry: FrameGeometry = FrameGeometry()):
    images = modality_images(sample, mode, geometry)
    feats = []
    for m in modalities_for(mode):
        if m not in encoders:
            raise DataError(f"no encoder for modality {m!r}")
        enc = encoders[m]
        dtype = enc.sublayers["norm"].params["gamma"].dtype
        feats.append(encode_modality(fragments_for(images[m], dtype), enc))
    d = feats[0].shape[-1]
    return ModalityBundle(feats, modalities_for(mode), tuple(f.shape[0] for f in feats), d)


def stack_fragments(samples, mode, geometry: FrameGeometry = FrameGeometry(), dtype=np.float32,
                    norm="minmax"):
    """Batched fragments for many samples: ``{modality: (N, K_i, 256)}``."""
    out = {}
    for m in modalities_for(mode):
        arrs = [fragments_for(modality_images(s, mode, geometry)[m], dtype, norm) for s in samples]
        out[m] = np.stack(arrs) if arrs else np.zeros((0, 0, PATCH * PATCH), dtype)
    return out
