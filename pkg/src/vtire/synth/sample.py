"""Whole observations: raw frame plus crops, external image, labels and masks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import FrameGeometry
from .objects import DAMAGE_STATES, gen_crack, gen_damage, gen_object_imprint
from .render import (CorruptionSpec, apply_corruption, compose_raw_frame, gen_external,
                     render_tactile, render_visual)
from .rng import stream
from .terrain import gen_terrain

EXTERNAL_CYCLE = ("sunny", "smoke", "dark")


@dataclass
class FrameSample:
    raw_frame: np.ndarray
    tactile_crop: np.ndarray
    visual_crop: np.ndarray
    external_image: np.ndarray | None = None
    terrain_label: int | None = None
    damage_label: int | None = None
    contact_mask: np.ndarray | None = None  # tactile-crop coordinates
    seed: int = 0
    params: dict = field(default_factory=dict)

    @property
    def label(self):
        return self.damage_label if self.damage_label is not None else self.terrain_label


def terrain_sample(class_id, seed, geometry=FrameGeometry(), visual_corruption=None,
                   external=True, load_range=(0.25, 0.45)):
    """One tire frame over terrain ``class_id``.

    The visual panels get ``visual_corruption`` (mud on the transparent wall);
    the external camera condition cycles deterministically per seed through
    sunny, smoke and dark.
    """
    rng = stream(seed, "terrain-sample")
    terrain = gen_terrain(class_id, seed)
    load = float(rng.uniform(*load_range))
    tactile = render_tactile(terrain.heightfield, geometry, load, seed)
    visual = render_visual(terrain.albedo, geometry, seed)
    if visual_corruption is not None:
        visual = apply_corruption(visual, visual_corruption, seed)
    raw = compose_raw_frame(tactile, visual, geometry)
    params = {"task": "terrain", "class_id": int(class_id), "class_name": terrain.name,
              "load_offset": load}
    ext = None
    if external:
        condition = EXTERNAL_CYCLE[int(rng.integers(len(EXTERNAL_CYCLE)))]
        ext = gen_external(terrain.albedo, condition, seed)
        params["external_condition"] = condition
    return FrameSample(raw, tactile, visual, ext, terrain_label=int(class_id), seed=int(seed),
                       params=params)


def _panels_for(seed, geometry, visual_corruption):
    rng = stream(seed, "panels")
    terrain = gen_terrain(int(rng.integers(12)), int(rng.integers(2**62)))
    visual = render_visual(terrain.albedo, geometry, seed)
    if visual_corruption is not None:
        visual = apply_corruption(visual, visual_corruption, seed)
    return visual


def damage_sample(state, seed, geometry=FrameGeometry(), salt_pepper=0.05, terrain_overlay=True):
    d = gen_damage(state, seed, geometry, terrain_overlay=terrain_overlay, salt_pepper=salt_pepper)
    visual = _panels_for(seed, geometry, None)
    raw = compose_raw_frame(d["image"], visual, geometry)
    params = {k: v for k, v in d.items() if k != "image"}
    params["task"] = "damage"
    return FrameSample(raw, d["image"], visual, damage_label=DAMAGE_STATES.index(state),
                       seed=int(seed), params=params)


def object_sample(kind, seed, geometry=FrameGeometry()):
    o = gen_object_imprint(kind, seed, geometry)
    visual = _panels_for(seed, geometry, None)
    raw = compose_raw_frame(o["image"], visual, geometry)
    return FrameSample(raw, o["image"], visual, contact_mask=o["mask"], seed=int(seed),
                       params={"task": "object_seg", "kind": kind, "load_offset": o["load_offset"]})


def crack_sample(width_mm, seed, geometry=FrameGeometry()):
    c = gen_crack(width_mm, seed, geometry)
    visual = _panels_for(seed, geometry, None)
    raw = compose_raw_frame(c["image"], visual, geometry)
    return FrameSample(raw, c["image"], visual, contact_mask=c["mask"], seed=int(seed),
                       params={"task": "crack_seg", "width_mm": float(width_mm),
                               "length_px": c["length_px"]})
