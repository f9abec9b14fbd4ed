"""Sensor rendering: tactile imprint, in-tire visual panels, external camera,
corruptions, and composition of the raw camera frame."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import DimensionError
from .geometry import FrameGeometry
from .rng import stream

TACTILE_BASE = 60.0
TACTILE_GAIN = 400.0  # intensity levels per mm of indentation
SKIN_DEPTH_MM = 10.0  # camera-to-skin distance of the unloaded membrane


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str = "none"  # none | salt_pepper | smoke | dark
    density: float = 0.05
    blur_sigma: float = 3.0
    haze_alpha: float = 0.6
    gain: float = 0.15
    applies_to: tuple = ("visual",)

    def __post_init__(self):
        if self.kind not in ("none", "salt_pepper", "smoke", "dark"):
            raise ValueError(f"unknown corruption kind {self.kind!r}")
        if not 0 <= self.density <= 1:
            raise ValueError("density must lie in [0, 1]")
        if not 0 < self.gain <= 1:
            raise ValueError("gain must lie in (0, 1]")
        if self.blur_sigma < 0 or not 0 <= self.haze_alpha <= 1:
            raise ValueError("blur_sigma must be >= 0 and haze_alpha in [0, 1]")


NONE = CorruptionSpec("none")
EXTERNAL_CONDITIONS = {
    "sunny": NONE,
    "smoke": CorruptionSpec("smoke", blur_sigma=3.0, haze_alpha=0.6, applies_to=("external",)),
    "dark": CorruptionSpec("dark", gain=0.15, applies_to=("external",)),
}


def _to_u8(img):
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _tactile_window(heightfield, geometry):
    n = geometry.crop_size
    if heightfield.shape == (n, n):
        return heightfield
    if heightfield.shape == (geometry.frame_size, geometry.frame_size):
        r0, r1, c0, c1 = geometry.disk_box
        return heightfield[r0:r1, c0:c1]
    raise DimensionError(f"heightfield {heightfield.shape} matches neither crop nor frame size")


def indentation(heightfield, geometry, load_offset, reference=None):
    """Membrane penetration (mm) inside the tactile disk, zero elsewhere.

    ``reference`` is the surface height the undeformed skin rests at; by
    default the highest point under the disk, so ``load_offset`` is how far the
    skin is pushed past the first touch.
    """
    if load_offset < 0:
        raise ValueError("load_offset must be >= 0")
    h = _tactile_window(np.asarray(heightfield, dtype=np.float64), geometry)
    disk = geometry.disk_mask()
    ref = h[disk].max() if reference is None else reference
    p = np.maximum(0.0, h - (ref - load_offset))
    p[~disk] = 0.0
    return p


def render_tactile(heightfield, geometry: FrameGeometry, load_offset, seed, noise_sigma=2.0,
                   reference=None, return_depth=False):
    """Tactile crop (``crop_size`` square, uint8) with the background outside the disk."""
    p = indentation(heightfield, geometry, load_offset, reference)
    disk = geometry.disk_mask()
    img = TACTILE_BASE + TACTILE_GAIN * p
    if noise_sigma > 0:
        img = img + stream(seed, "tactile-noise").normal(0, noise_sigma, img.shape)
    img = _to_u8(img)
    img[~disk] = geometry.background
    if return_depth:
        depth = np.full(p.shape, SKIN_DEPTH_MM) - p
        return img, depth
    return img


def render_visual(albedo, geometry: FrameGeometry, seed, blur_sigma=1.0, vignette=0.35,
                  noise_sigma=1.0):
    """Both side panels seen through the transparent tire wall, side by side.

    Returns a ``(frame_size, 2 * panel_width)`` uint8 image.
    """
    albedo = np.asarray(albedo, dtype=np.float64)
    n = geometry.frame_size
    if albedo.shape != (n, n):
        raise DimensionError(f"albedo {albedo.shape} must match frame {n}x{n}")
    img = gaussian_filter(albedo, blur_sigma, mode="nearest") if blur_sigma > 0 else albedo.copy()
    if vignette:
        yy, xx = np.mgrid[0:n, 0:n] + 0.5
        r2 = ((yy - n / 2) ** 2 + (xx - n / 2) ** 2) / (2 * (n / 2) ** 2)
        img = img * (1 - vignette * r2)
    if noise_sigma > 0:
        img = img + stream(seed, "visual-noise").normal(0, noise_sigma, img.shape)
    panels = [img[s] for s in geometry.panel_slices()]
    return _to_u8(np.concatenate(panels, axis=1))


def apply_corruption(image, spec: CorruptionSpec, seed):
    image = np.asarray(image)
    if spec.kind == "none":
        return image.copy()
    out = image.astype(np.float64)
    if spec.kind == "salt_pepper":
        rng = stream(seed, "salt-pepper")
        hit = rng.random(out.shape) < spec.density
        salt = rng.random(out.shape) < 0.5
        out[hit & salt] = 255.0
        out[hit & ~salt] = 0.0
    elif spec.kind == "smoke":
        if spec.blur_sigma > 0:
            out = gaussian_filter(out, spec.blur_sigma, mode="nearest")
        out = (1 - spec.haze_alpha) * out + spec.haze_alpha * 200.0
    elif spec.kind == "dark":
        out = np.clip(out * spec.gain, 0, 255)
    if image.dtype == np.uint8:
        return _to_u8(out)
    return out


def gen_external(albedo, condition, seed, size=64, noise_sigma=2.0):
    """External camera view of the terrain under ``sunny``, ``smoke`` or ``dark``."""
    if condition not in EXTERNAL_CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}")
    albedo = np.asarray(albedo, dtype=np.float64)
    f = albedo.shape[0] // size
    img = albedo[:size * f, :size * f].reshape(size, f, size, f).mean(axis=(1, 3))
    img = apply_corruption(img, EXTERNAL_CONDITIONS[condition], stream(seed, "ext").integers(2**63))
    if noise_sigma > 0:
        img = img + stream(seed, "external-noise").normal(0, noise_sigma, img.shape)
    return _to_u8(img)


def compose_raw_frame(tactile, visual, geometry: FrameGeometry):
    """Paint the tactile crop and the two visual panels into a full frame."""
    tactile, visual = np.asarray(tactile), np.asarray(visual)
    n, c = geometry.frame_size, geometry.crop_size
    if tactile.shape != (c, c) or visual.shape != geometry.visual_shape:
        raise DimensionError(
            f"crops {tactile.shape}, {visual.shape} do not match geometry ({c}x{c}, {geometry.visual_shape})")
    frame = np.full((n, n), geometry.background, dtype=np.uint8)
    r0, r1, c0, c1 = geometry.disk_box
    disk = geometry.disk_mask()
    frame[r0:r1, c0:c1][disk] = tactile[disk]
    w = geometry.panel_width
    left, right = geometry.panel_slices()
    frame[left] = visual[:, :w]
    frame[right] = visual[:, w:]
    return frame
