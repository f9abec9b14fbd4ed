from .geometry import FrameGeometry
from .objects import (DAMAGE_STATES, OBJECT_KINDS, empty_imprint, gen_crack, gen_damage,
                      gen_object_imprint)
from .render import (CorruptionSpec, EXTERNAL_CONDITIONS, apply_corruption, compose_raw_frame,
                     gen_external, indentation, render_tactile, render_visual)
from .rng import derive_seed, stream
from .sample import FrameSample, crack_sample, damage_sample, object_sample, terrain_sample
from .terrain import Terrain, class_names, gen_terrain, n_classes, radial_power_spectrum
