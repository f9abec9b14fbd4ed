"""Procedural terrains: a heightfield (mm) and a grayscale albedo per class.

Class parameters live in ``data/terrain_classes.json`` (versioned); the
family named in each entry selects the generator below. Everything is a pure
function of ``(class_id, seed)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy.ndimage import gaussian_filter

from .rng import stream


@dataclass
class Terrain:
    heightfield: np.ndarray  # mm
    albedo: np.ndarray  # 0..255 float
    class_id: int
    name: str


@lru_cache(maxsize=None)
def terrain_config():
    text = resources.files("vtire.synth").joinpath("data/terrain_classes.json").read_text()
    return json.loads(text)


def class_names():
    return [c["name"] for c in terrain_config()["classes"]]


def n_classes():
    return len(terrain_config()["classes"])


def _grid(n):
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    return yy + 0.5, xx + 0.5


def _stripes(p, n, rng):
    theta = np.deg2rad(p["angle_deg"] + rng.uniform(-1, 1) * p["angle_jitter_deg"])
    phase = rng.uniform(0, p["pitch_px"])
    yy, xx = _grid(n)
    u = (xx * np.cos(theta) + yy * np.sin(theta) + phase) / p["pitch_px"]
    ridge = (u - np.floor(u)) < p["duty"]
    ridge = gaussian_filter(ridge.astype(float), 0.7)
    h = p["amplitude_mm"] * ridge
    alb = p["albedo_groove"] + (p["albedo_ridge"] - p["albedo_groove"]) * ridge
    return h, alb


def _disk_stamp(target, cy, cx, r, values_fn, combine=np.maximum):
    n = target.shape[0]
    y0, y1 = max(0, int(cy - r - 1)), min(n, int(cy + r + 2))
    x0, x1 = max(0, int(cx - r - 1)), min(n, int(cx + r + 2))
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1] + 0.5
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    inside = d2 <= r * r
    vals = values_fn(d2)
    sub = target[y0:y1, x0:x1]
    sub[inside] = combine(sub[inside], vals[inside])


def _painted(p, n, rng):
    field = gaussian_filter(rng.standard_normal((n, n)), p["smooth_sigma_px"], mode="wrap")
    field /= field.std() + 1e-12
    h = p["smooth_amp_mm"] * 0.5 * field
    alb = np.full((n, n), float(p["albedo_base"])) + 12 * field
    paint = np.zeros((n, n))
    for _ in range(rng.integers(p["n_blobs"][0], p["n_blobs"][1] + 1)):
        r = rng.uniform(*p["blob_radius_px"])
        cy, cx = rng.uniform(0, n, 2)
        _disk_stamp(paint, cy, cx, r, lambda d2: np.ones_like(d2))
    paint = gaussian_filter(paint, 1.0)
    h = h + p["blob_height_mm"] * paint
    alb = alb * (1 - paint) + p["albedo_paint"] * paint
    return h, alb


def _brick(p, n, rng):
    px, py, m = p["pitch_x_px"], p["pitch_y_px"], p["mortar_px"]
    ox, oy = rng.uniform(0, px), rng.uniform(0, py)
    yy, xx = _grid(n)
    row = np.floor((yy + oy) / py)
    xs = xx + ox + (row % 2) * px / 2  # running bond
    in_mortar = (((yy + oy) % py) < m) | ((xs % px) < m)
    groove = gaussian_filter(in_mortar.astype(float), 0.6)
    h = -p["groove_mm"] * groove
    shade = rng.normal(0, 8, size=int(row.max() - row.min() + 3))
    alb = p["albedo_brick"] + shade[(row - row.min()).astype(int)]
    alb = alb * (1 - groove) + p["albedo_mortar"] * groove
    return h, alb


def _segment_dist(yy, xx, ay, ax, by, bx):
    dy, dx = by - ay, bx - ax
    L2 = dy * dy + dx * dx
    t = np.clip(((yy - ay) * dy + (xx - ax) * dx) / max(L2, 1e-12), 0, 1)
    return np.hypot(yy - (ay + t * dy), xx - (ax + t * dx))


def _lawn(p, n, rng):
    h = np.zeros((n, n))
    alb = np.full((n, n), float(p["albedo_base"]))
    L, w = p["length_px"], p["width_px"]
    base_angle = np.deg2rad(p["angle_deg"])
    for _ in range(p["n_strokes"]):
        ang = base_angle + np.deg2rad(rng.uniform(-1, 1) * p["angle_spread_deg"])
        cy, cx = rng.uniform(-L / 2, n + L / 2, 2)
        ln = L * rng.uniform(0.7, 1.3)
        dy, dx = np.sin(ang) * ln / 2, np.cos(ang) * ln / 2
        ay, ax, by, bx = cy - dy, cx - dx, cy + dy, cx + dx
        y0, y1 = max(0, int(min(ay, by) - w - 1)), min(n, int(max(ay, by) + w + 2))
        x0, x1 = max(0, int(min(ax, bx) - w - 1)), min(n, int(max(ax, bx) + w + 2))
        if y0 >= y1 or x0 >= x1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1] + 0.5
        d = _segment_dist(yy, xx, ay, ax, by, bx)
        prof = np.clip(1 - d / w, 0, 1)
        height = p["height_mm"] * rng.uniform(0.6, 1.0)
        h[y0:y1, x0:x1] = np.maximum(h[y0:y1, x0:x1], height * prof)
        shade = p["albedo_blade"] + rng.normal(0, 10)
        a = alb[y0:y1, x0:x1]
        alb[y0:y1, x0:x1] = np.where(prof > 0, a * (1 - prof) + shade * prof, a)
    return h, alb


def poisson_disk(n, min_dist, rng, k=20):
    """Bridson sampling of points in ``[0, n)^2`` with pairwise spacing >= ``min_dist``."""
    cell = min_dist / np.sqrt(2)
    gw = int(np.ceil(n / cell))
    grid = -np.ones((gw, gw), dtype=int)
    pts = []

    def fits(q):
        gy, gx = int(q[0] / cell), int(q[1] / cell)
        for yy in range(max(0, gy - 2), min(gw, gy + 3)):
            for xx in range(max(0, gx - 2), min(gw, gx + 3)):
                j = grid[yy, xx]
                if j >= 0 and (pts[j][0] - q[0]) ** 2 + (pts[j][1] - q[1]) ** 2 < min_dist ** 2:
                    return False
        return True

    def add(q):
        pts.append(q)
        grid[int(q[0] / cell), int(q[1] / cell)] = len(pts) - 1

    add(tuple(rng.uniform(0, n, 2)))
    active = [0]
    while active:
        i = active[rng.integers(len(active))]
        base = pts[i]
        rs = rng.uniform(min_dist, 2 * min_dist, k)
        angs = rng.uniform(0, 2 * np.pi, k)
        placed = False
        for r, a in zip(rs, angs):
            q = (base[0] + r * np.sin(a), base[1] + r * np.cos(a))
            if 0 <= q[0] < n and 0 <= q[1] < n and fits(q):
                add(q)
                active.append(len(pts) - 1)
                placed = True
                break
        if not placed:
            active.remove(i)
    return np.array(pts)


def _gravel(p, n, rng):
    r0, jit = p["radius_px"], p["radius_jitter"]
    rmax = r0 * (1 + jit)
    centers = poisson_disk(n + 2 * rmax, 2 * rmax + p["gap_px"], rng) - rmax
    h = np.zeros((n, n))
    alb = np.full((n, n), float(p["albedo_soil"])) + gaussian_filter(rng.normal(0, 12, (n, n)), 1.5)
    scale = p["dome_mm_per_px"]
    for cy, cx in centers:
        r = r0 * (1 + rng.uniform(-jit, jit))
        shade = np.clip(rng.normal(p["albedo_stone"], p["albedo_stone_sd"]), 5, 250)
        _disk_stamp(h, cy, cx, r, lambda d2, r=r: scale * np.sqrt(np.maximum(r * r - d2, 0)))
        _disk_stamp(alb, cy, cx, r, lambda d2, s=shade: np.full_like(d2, s), combine=lambda a, b: b)
    return h, alb


_FAMILIES = {"stripes": _stripes, "painted": _painted, "brick": _brick, "lawn": _lawn,
             "gravel": _gravel}


def gen_terrain(class_id: int, seed: int, size: int | None = None) -> Terrain:
    cfg = terrain_config()
    classes = cfg["classes"]
    if not 0 <= int(class_id) < len(classes):
        raise ValueError(f"terrain class {class_id} out of range [0, {len(classes)})")
    p = classes[int(class_id)]
    n = size or cfg["canvas_px"]
    rng = stream(seed, "terrain", class_id)
    h, alb = _FAMILIES[p["family"]](p, n, rng)
    alb = alb + rng.normal(0, cfg["albedo_noise"], alb.shape)
    return Terrain(h.astype(np.float64), np.clip(alb, 0, 255), int(class_id), p["name"])


def radial_power_spectrum(img, n_bins=32):
    """Azimuthally averaged log power spectrum (DC kept)."""
    f = np.fft.fftshift(np.abs(np.fft.fft2(img)) ** 2)
    n = img.shape[0]
    yy, xx = np.mgrid[0:n, 0:n] - n // 2
    r = np.hypot(yy, xx)
    bins = np.minimum((r / (n / 2) * n_bins).astype(int), n_bins - 1)
    total = np.bincount(bins.ravel(), f.ravel(), minlength=n_bins)
    count = np.bincount(bins.ravel(), minlength=n_bins)
    return np.log10(total / np.maximum(count, 1) + 1e-12)
