"""Load-weight sensing: plane-strain FEM contact model of the tire, calibration and inversion."""
from .calibration import (G_ACCEL, LoadCalibration, LoadCurve, calibration_forces, estimate_weight,
                          fit_calibration, load_protocol, offset_from_depthmap, sweep_curve)
from .fem import (HUB, MATERIAL_PRESETS, SENSOR, Material, Mesh, TireGeometry, assemble_stiffness, build_mesh,
                  element_stiffness, jacobians_positive, single_layer_mesh)
from .solver import ContactResult, FemModel, pcg, solve_contact
from .verify import energy_audit, patch_test, thin_ring_pinch, unit_square_patch
from .vtk import read_vtk_points, write_vtk
