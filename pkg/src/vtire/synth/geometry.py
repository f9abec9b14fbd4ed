"""Frame layout of the in-tire camera image."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import DimensionError


@dataclass(frozen=True)
class FrameGeometry:
    """Tactile disk in the middle of the frame, one visual panel on each side.

    Panels are full-height column bands ``[0, panel_width)`` and
    ``[size - panel_width, size)``.
    """

    frame_size: int = 128
    disk_radius: int = 44
    panel_width: int = 16
    mm_per_px: float = 0.1
    background: int = 0

    def __post_init__(self):
        if self.mm_per_px <= 0:
            raise ValueError("mm_per_px must be positive")
        c = self.frame_size / 2
        if c - self.disk_radius < self.panel_width or self.disk_radius <= 0:
            raise ValueError("tactile disk overlaps the visual panels or leaves the frame")

    @property
    def center(self):
        return (self.frame_size / 2, self.frame_size / 2)

    @property
    def disk_box(self):
        """``(row0, row1, col0, col1)`` bounding square of the tactile disk."""
        c = self.frame_size // 2
        r = self.disk_radius
        return c - r, c + r, c - r, c + r

    @property
    def crop_size(self):
        return 2 * self.disk_radius

    def disk_mask(self):
        """Boolean mask of the disk in crop coordinates (pixel centres inside the circle)."""
        n = self.crop_size
        yy, xx = np.mgrid[0:n, 0:n] + 0.5
        r = self.disk_radius
        return (yy - r) ** 2 + (xx - r) ** 2 <= r * r

    def frame_disk_mask(self):
        m = np.zeros((self.frame_size, self.frame_size), bool)
        r0, r1, c0, c1 = self.disk_box
        m[r0:r1, c0:c1] = self.disk_mask()
        return m

    def panel_slices(self):
        n, w = self.frame_size, self.panel_width
        return [(slice(0, n), slice(0, w)), (slice(0, n), slice(n - w, n))]

    @property
    def visual_shape(self):
        return (self.frame_size, 2 * self.panel_width)

    def check_frame(self, frame):
        if np.shape(frame) != (self.frame_size, self.frame_size):
            raise DimensionError(
                f"frame shape {np.shape(frame)} does not match geometry {self.frame_size}x{self.frame_size}")

    def to_dict(self):
        return asdict(self)
