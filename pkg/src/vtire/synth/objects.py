"""Contact objects, ground cracks and tire damage on the tactile region.

All images are tactile crops (``geometry.crop_size`` square, uint8) and all
masks are boolean arrays of the same shape, nonzero only inside the disk.
"""
from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .geometry import FrameGeometry
from .render import TACTILE_BASE, TACTILE_GAIN, _to_u8, apply_corruption, CorruptionSpec, \
    render_tactile
from .rng import stream
from .terrain import gen_terrain, n_classes

OBJECT_KINDS = ("rope", "lens", "nut", "screw", "usb")
DAMAGE_STATES = ("normal", "crack", "wear", "puncture")
OBJECT_HEIGHT_MM = 1.0
PUNCTURE_DIAMETER_PX = (3.0, 6.0)
# damage rendering: fraction of skin brightness removed by a crack / a wear blotch,
# and the contact depth range (mm) of the terrain imprint underneath
CRACK_WIDTH_PX = (1.5, 3.0)
CRACK_ATTENUATION = 0.65
WEAR_ATTENUATION = 0.45
DAMAGE_OVERLAY_LOAD = (0.0, 0.25)


def _grid(n):
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    return yy + 0.5, xx + 0.5


def polyline_distance(yy, xx, pts):
    """Distance from every pixel centre to a polyline given as ``(k, 2)`` (y, x) points."""
    d = np.full(yy.shape, np.inf)
    for (ay, ax), (by, bx) in zip(pts[:-1], pts[1:]):
        dy, dx = by - ay, bx - ax
        L2 = dy * dy + dx * dx
        t = np.clip(((yy - ay) * dy + (xx - ax) * dx) / max(L2, 1e-12), 0, 1)
        d = np.minimum(d, np.hypot(yy - (ay + t * dy), xx - (ax + t * dx)))
    return d


def stroke_coverage(dist, width):
    """Fraction of a unit pixel footprint covered by a stroke of ``width`` px.

    One-dimensional box overlap across the stroke: exact for axis-aligned
    strokes, a close approximation otherwise, and linear in width below a
    pixel so sub-pixel cracks render as partial intensity.
    """
    hw = width / 2.0
    return np.clip(np.minimum(dist + 0.5, hw) - np.maximum(dist - 0.5, -hw), 0.0, 1.0)


def polyline_length(pts):
    return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))


def _catmull_rom(ctrl, samples=16):
    p = np.vstack([ctrl[0], ctrl, ctrl[-1]])
    out = []
    for i in range(1, len(p) - 2):
        p0, p1, p2, p3 = p[i - 1], p[i], p[i + 1], p[i + 2]
        for t in np.linspace(0, 1, samples, endpoint=False):
            t2, t3 = t * t, t * t * t
            out.append(0.5 * ((2 * p1) + (-p0 + p2) * t + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t2
                              + (-p0 + 3 * p1 - 3 * p2 + p3) * t3))
    out.append(p[-2])
    return np.array(out)


def _rotate(yy, xx, cy, cx, ang):
    c, s = np.cos(ang), np.sin(ang)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return u, v


def annulus_mask(n, cy, cx, r_out, r_in):
    """Pixels whose centres lie in the ring ``r_in <= r <= r_out``."""
    yy, xx = _grid(n)
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    return (d2 <= r_out * r_out) & (d2 >= r_in * r_in)


def object_silhouette(kind, geometry: FrameGeometry, rng):
    n = geometry.crop_size
    r = geometry.disk_radius
    yy, xx = _grid(n)
    cy, cx = r + rng.uniform(-0.35, 0.35, 2) * r
    ang = rng.uniform(0, np.pi)
    if kind == "rope":
        k = 5
        span = rng.uniform(45, 65)
        t = np.linspace(-0.5, 0.5, k)
        base = np.stack([cy + span * t * np.sin(ang), cx + span * t * np.cos(ang)], axis=1)
        base += rng.normal(0, 6, base.shape)
        curve = _catmull_rom(base)
        width = rng.uniform(4, 7)
        return polyline_distance(yy, xx, curve) <= width / 2
    if kind == "lens":
        ro = rng.uniform(10, 16)
        ri = ro * rng.uniform(0.55, 0.75)
        return annulus_mask(n, cy, cx, ro, ri)
    if kind == "nut":
        R = rng.uniform(9, 14)
        u, v = _rotate(yy, xx, cy, cx, ang)
        phi = np.arctan2(v, u)
        rho = np.hypot(u, v)
        sector = np.mod(phi, np.pi / 3) - np.pi / 6
        apothem = R * np.cos(np.pi / 6)
        hexagon = rho * np.cos(sector) <= apothem
        return hexagon & (rho >= 0.45 * R)
    if kind == "screw":
        L = rng.uniform(30, 45)
        w = rng.uniform(4, 6)
        head = rng.uniform(9, 12)
        u, v = _rotate(yy, xx, cy, cx, ang)
        shaft = (np.abs(u) <= L / 2) & (np.abs(v) <= w / 2)
        hd = (u + L / 2) ** 2 + v ** 2 <= (head / 2) ** 2
        return shaft | hd
    if kind == "usb":
        a, b = rng.uniform(24, 34) / 2, rng.uniform(12, 18) / 2
        rc = 3.0
        u, v = _rotate(yy, xx, cy, cx, ang)
        qx, qy = np.abs(u) - (a - rc), np.abs(v) - (b - rc)
        outside = np.hypot(np.maximum(qx, 0), np.maximum(qy, 0)) + np.minimum(np.maximum(qx, qy), 0)
        return outside <= rc
    raise ValueError(f"unknown object kind {kind!r}; expected one of {OBJECT_KINDS}")


def gen_object_imprint(kind, seed, geometry: FrameGeometry = FrameGeometry(), load_offset=None,
                       noise_sigma=2.0):
    """Flat-topped object pressed into the skin; mask = silhouette inside the disk."""
    if kind not in OBJECT_KINDS:
        raise ValueError(f"unknown object kind {kind!r}; expected one of {OBJECT_KINDS}")
    rng = stream(seed, "object", kind)
    sil = object_silhouette(kind, geometry, rng)
    if load_offset is None:
        load_offset = rng.uniform(0.3, 0.5)
    h = np.where(sil, OBJECT_HEIGHT_MM, 0.0)
    img = render_tactile(h, geometry, load_offset, seed, noise_sigma=noise_sigma,
                         reference=OBJECT_HEIGHT_MM)
    mask = sil & geometry.disk_mask()
    return {"image": img, "mask": mask, "kind": kind, "load_offset": float(load_offset)}


def empty_imprint(seed, geometry: FrameGeometry = FrameGeometry(), noise_sigma=2.0):
    """Flat floor with nothing on it, rendered relative to the flat-contact reference."""
    h = np.zeros((geometry.crop_size,) * 2)
    img = render_tactile(h, geometry, 0.4, seed, noise_sigma=noise_sigma, reference=OBJECT_HEIGHT_MM)
    return {"image": img, "mask": np.zeros_like(img, dtype=bool), "kind": "none", "load_offset": 0.4}


def crack_path(geometry: FrameGeometry, rng, straight=False):
    """Random-walk polyline crossing the disk (a straight chord when ``straight``)."""
    r = geometry.disk_radius
    ang = rng.uniform(0, 2 * np.pi)
    offset = rng.uniform(-0.4, 0.4) * r
    c = np.array([r, r]) + offset * np.array([np.cos(ang), -np.sin(ang)])
    direction = np.array([np.sin(ang), np.cos(ang)])
    start = c - direction * 1.2 * r
    if straight:
        return np.array([start, c + direction * 1.2 * r])
    pts = [start]
    heading = np.arctan2(direction[0], direction[1])
    step = 6.0
    for _ in range(int(2.4 * r / step) + 1):
        heading += rng.normal(0, 0.25)
        # pull gently back toward the original direction
        heading += 0.3 * (np.arctan2(direction[0], direction[1]) - heading)
        pts.append(pts[-1] + step * np.array([np.sin(heading), np.cos(heading)]))
    return np.array(pts)


def gen_crack(width_mm, seed, geometry: FrameGeometry = FrameGeometry(), load_offset=0.35,
              straight=False, noise_sigma=2.0):
    """Crack in a flat, fully contacted floor: a groove where the skin loses contact.

    Coverage is anti-aliased so sub-pixel widths give partial intensity; the
    mask marks pixels at least half covered.
    """
    if width_mm <= 0:
        raise ValueError("crack width must be positive")
    rng = stream(seed, "crack")
    pts = crack_path(geometry, rng, straight=straight)
    n = geometry.crop_size
    yy, xx = _grid(n)
    width_px = width_mm / geometry.mm_per_px
    cov = stroke_coverage(polyline_distance(yy, xx, pts), width_px)
    h = -cov * load_offset  # groove at least as deep as the skin is pressed
    img = render_tactile(h, geometry, load_offset, seed, noise_sigma=noise_sigma, reference=0.0)
    disk = geometry.disk_mask()
    mask = (cov >= 0.5) & disk
    clipped = _clip_to_disk(pts, geometry)
    return {"image": img, "mask": mask, "coverage": cov * disk, "path": pts,
            "length_px": polyline_length(clipped) if len(clipped) > 1 else 0.0,
            "width_px": width_px}


def _clip_to_disk(pts, geometry, samples=20):
    """Resample the polyline densely and keep the part inside the disk."""
    r = geometry.disk_radius
    dense = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        for t in np.linspace(0, 1, samples + 1)[1:]:
            dense.append(a + t * (b - a))
    dense = np.array(dense)
    inside = np.hypot(dense[:, 0] - r, dense[:, 1] - r) <= r
    return dense[inside]


def gen_damage(state, seed, geometry: FrameGeometry = FrameGeometry(), terrain_overlay=True,
               salt_pepper=0.05, noise_sigma=2.0):
    """Tactile crop showing a persistent skin defect, optionally over a terrain imprint."""
    if state not in DAMAGE_STATES:
        raise ValueError(f"unknown damage state {state!r}; expected one of {DAMAGE_STATES}")
    rng = stream(seed, "damage", state)
    n = geometry.crop_size
    disk = geometry.disk_mask()
    info = {"state": state, "label": DAMAGE_STATES.index(state)}
    if terrain_overlay:
        cls = int(rng.integers(n_classes()))
        terrain = gen_terrain(cls, int(rng.integers(2**62)))
        load = float(rng.uniform(*DAMAGE_OVERLAY_LOAD))
        info.update(terrain_class=cls, load_offset=load)
        img = render_tactile(terrain.heightfield, geometry, load, seed, noise_sigma=0.0).astype(float)
    else:
        img = np.full((n, n), TACTILE_BASE)
    yy, xx = _grid(n)
    if state == "crack":
        pts = crack_path(geometry, rng)
        width = rng.uniform(*CRACK_WIDTH_PX)
        cov = stroke_coverage(polyline_distance(yy, xx, pts), width)
        img = img * (1 - CRACK_ATTENUATION * cov)
        info["width_px"] = float(width)
    elif state == "wear":
        field = gaussian_filter(rng.standard_normal((n, n)), 6.0)
        field /= field.std()
        blotch = np.clip(field - 0.3, 0, 1.5) / 1.5
        img = img * (1 - WEAR_ATTENUATION * blotch)
    elif state == "puncture":
        diameter = rng.uniform(*PUNCTURE_DIAMETER_PX)
        r = geometry.disk_radius
        rad = rng.uniform(0, 0.7 * r)
        phi = rng.uniform(0, 2 * np.pi)
        cy, cx = r + rad * np.sin(phi), r + rad * np.cos(phi)
        d = np.hypot(yy - cy, xx - cx)
        halo = 70 * np.exp(-0.5 * (np.maximum(d - diameter / 2, 0) / 3.0) ** 2)
        img = np.maximum(img, np.minimum(img + halo, 255))
        img[d <= diameter / 2] = 250
        info["diameter_px"] = float(diameter)
    if noise_sigma > 0:
        img = img + stream(seed, "damage-noise").normal(0, noise_sigma, img.shape)
    img = _to_u8(img)
    img[~disk] = geometry.background
    if salt_pepper > 0:
        noisy = apply_corruption(img, CorruptionSpec("salt_pepper", density=salt_pepper), seed)
        img = np.where(disk, noisy, img).astype(np.uint8)
    info["image"] = img
    return info


def euler_number(mask):
    """Components minus holes (4-connected foreground, 8-connected background)."""
    from scipy.ndimage import label
    fg, n_fg = label(mask)
    bg, n_bg = label(~np.pad(mask, 1), structure=np.ones((3, 3)))
    return n_fg - (n_bg - 1)
