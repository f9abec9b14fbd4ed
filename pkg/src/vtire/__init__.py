"""Synthetic visuotactile tire perception toolkit.

Subpackages
-----------
nn          explicit forward/backward layers, Adam, gradient checking, checkpoints
synth       procedural terrains, tactile/visual rendering, objects, cracks, damage
loadsense   plane-strain FEM contact solver and load calibration

Modules ``modality``, ``mmvtt``, ``segment`` and ``datasets`` build on these.
"""

__version__ = "0.1.0"
