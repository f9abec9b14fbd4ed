import json
from fractions import Fraction

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.linalg import spsolve

from vtire.errors import AssemblyError, ConfigError, DimensionError, FitError, SolverError
from vtire.loadsense import (G_ACCEL, HUB, MATERIAL_PRESETS, SENSOR, FemModel, LoadCalibration,
                             LoadCurve, Material, TireGeometry, assemble_stiffness, build_mesh,
                             calibration_forces, element_stiffness, energy_audit, estimate_weight,
                             fit_calibration, jacobians_positive, load_protocol,
                             offset_from_depthmap, patch_test, pcg, read_vtk_points, solve_contact,
                             sweep_curve, thin_ring_pinch, unit_square_patch, write_vtk)
from vtire.synth import FrameGeometry, render_tactile
from vtire.synth.render import SKIN_DEPTH_MM

A_FIELD = [0.1, 0.01, -0.02, 0.03, 0.005, -0.01]


@pytest.fixture(scope="module")
def coarse():
    return FemModel(n_r=4, n_c=128)


@pytest.fixture(scope="module")
def coarse_curve(coarse):
    return sweep_curve(coarse, calibration_forces(35.0, 8))


# -- materials and mesh ------------------------------------------------------------------

@given(st.floats(-1, 0.6))
def test_material_rejects_bad_poisson(nu):
    if 0 < nu < 0.5:
        assert Material(1.0, nu).nu == nu
    else:
        with pytest.raises(ConfigError):
            Material(1.0, nu)


def test_material_presets():
    assert MATERIAL_PRESETS["paper"] == (Material(0.1973, 0.48), Material(24.06, 0.49))
    assert MATERIAL_PRESETS["swapped"] == (SENSOR, HUB)
    with pytest.raises(ConfigError):
        Material(0.0, 0.3)


@given(st.integers(2, 6), st.sampled_from([16, 32, 48]))
@settings(max_examples=15, deadline=None)
def test_mesh_counts_and_orientation(n_r, n_c):
    mesh = build_mesh(TireGeometry(), n_r, n_c)
    assert mesh.n_nodes == (n_r + 1) * n_c
    assert len(mesh.elements) == n_r * n_c
    assert jacobians_positive(mesh)
    xy = mesh.nodes[mesh.elements]
    area = 0.5 * np.sum(xy[:, :, 0] * np.roll(xy[:, :, 1], -1, 1) - np.roll(xy[:, :, 0], -1, 1) * xy[:, :, 1], 1)
    assert np.all(area > 0)  # counterclockwise


def test_mesh_layer_boundary_and_tags():
    g = TireGeometry()
    mesh = build_mesh(g, 8, 64)
    assert g.r_layer in mesh.radii
    r_mid = np.linalg.norm(mesh.nodes[mesh.elements].mean(axis=1), axis=1)
    assert np.all((r_mid > g.r_layer) == (mesh.material_id == 1))
    assert len(build_mesh(g, 4, 128).contact_nodes) == 2 * len(build_mesh(g, 4, 64).contact_nodes)
    assert np.allclose(np.linalg.norm(mesh.nodes[mesh.hub_nodes], axis=1), g.r_in)


def test_mesh_rejects_bad_sizes():
    with pytest.raises(ConfigError):
        build_mesh(TireGeometry(), 1, 64)
    with pytest.raises(ConfigError):
        build_mesh(TireGeometry(), 4, 8)
    with pytest.raises(ConfigError):
        TireGeometry(r_in=90.0)


# -- element and assembly ------------------------------------------------------------

def test_unit_square_patch_is_exact():
    stress_err, alpha, forces = unit_square_patch(SENSOR, A_FIELD)
    assert stress_err < 1e-10
    assert alpha < 1e-12  # a linear field excites no incompatible modes
    assert abs(forces[0::2].sum()) < 1e-12 and abs(forces[1::2].sum()) < 1e-12


@pytest.mark.parametrize("n_r,n_c", [(2, 16), (4, 32)])
def test_annulus_patch_test(n_r, n_c):
    mesh = build_mesh(TireGeometry(), n_r, n_c)
    u_err, s_err = patch_test(mesh, HUB, A_FIELD)
    assert u_err < 1e-10
    assert s_err < 1e-10 * np.abs(HUB.plane_strain()).max()


def test_stiffness_symmetric_with_three_rigid_modes():
    mesh = build_mesh(TireGeometry(), 2, 16)
    K = assemble_stiffness(mesh).toarray()
    assert np.abs(K - K.T).max() < 1e-12 * np.abs(K).max()
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    modes = [np.stack([np.ones_like(x), 0 * x], 1), np.stack([0 * x, np.ones_like(x)], 1),
             np.stack([-y, x], 1)]
    for m in modes:
        assert np.linalg.norm(K @ m.ravel()) < 1e-9 * np.linalg.norm(K) * np.linalg.norm(m)
    eig = np.linalg.eigvalsh(K)
    assert eig.min() > -1e-10 * eig.max()
    assert np.sum(eig < 1e-10 * eig.max()) == 3


def test_degenerate_element_reports_its_id():
    mesh = build_mesh(TireGeometry(), 2, 16)
    mesh.nodes = mesh.nodes.copy()
    a, b, c, d = mesh.elements[5]
    mesh.nodes[c] = mesh.nodes[a]  # fold the element
    with pytest.raises(AssemblyError) as info:
        assemble_stiffness(mesh)
    assert info.value.element in {e for e, conn in enumerate(mesh.elements) if c in conn}
    with pytest.raises(AssemblyError):
        element_stiffness(np.zeros((4, 2)), SENSOR.plane_strain())


# -- linear solver -------------------------------------------------------------------------

def test_pcg_matches_direct_solve(rng):
    M = sp.random(60, 60, density=0.1, random_state=1)
    A = (M @ M.T + sp.eye(60) * 0.5).tocsr()
    b = rng.standard_normal(60)
    x, hist = pcg(A, b, tol=1e-12)
    assert hist[-1] < 1e-12
    assert np.allclose(x, spsolve(A.tocsc(), b), atol=1e-9)
    assert np.array_equal(pcg(A, np.zeros(60))[0], np.zeros(60))


def test_pcg_failure_carries_history(rng):
    M = sp.random(80, 80, density=0.1, random_state=2)
    A = (M @ M.T + sp.eye(80) * 1e-3).tocsr()
    with pytest.raises(SolverError) as info:
        pcg(A, rng.standard_normal(80), tol=1e-14, maxiter=3)
    assert len(info.value.residuals) == 4


# -- contact solve ---------------------------------------------------------------------

def test_zero_force_gives_zero_field(coarse):
    r = solve_contact(coarse, 0.0)
    assert not r.displacement.any() and r.offset == 0.0 and r.hub_drop == 0.0
    with pytest.raises(ValueError):
        solve_contact(coarse, -1.0)


def test_contact_solution_matches_direct_and_is_consistent(coarse):
    r = solve_contact(coarse, 150.0)
    mesh = coarse.mesh
    ydofs = 2 * mesh.contact_nodes[r.active] + 1
    springs = np.zeros(2 * mesh.n_nodes)
    springs[ydofs] = r.penalty
    A = coarse.K + sp.diags(springs)
    f = coarse.hub_load(150.0)
    f[ydofs] += r.penalty * coarse.gaps()[r.active]
    free = coarse.free_dofs
    u = np.zeros(2 * mesh.n_nodes)
    u[free] = spsolve(A[free][:, free].tocsc(), f[free])
    assert np.abs(u - r.displacement.ravel()).max() < 1e-6 * np.abs(u).max()
    # active nodes penetrate, inactive ones do not
    pen = coarse.gaps() - r.displacement[mesh.contact_nodes, 1]
    assert np.array_equal(pen > 0, r.active)
    assert r.residuals[-1] < 1e-8


def test_doubling_force_doubles_response_with_fixed_active_set(coarse):
    fixed = coarse.gaps() >= -1e-12  # zero-gap nodes only: a linear problem
    a = solve_contact(coarse, 40.0, active=fixed)
    b = solve_contact(coarse, 80.0, active=fixed)
    assert abs(b.offset / a.offset - 2) < 1e-6
    assert np.allclose(b.displacement, 2 * a.displacement, rtol=1e-6, atol=1e-9)
    # Clapeyron holds for a linear system
    assert b.energy["energy_balance_rel"] < 1e-6


def test_left_right_symmetry(coarse):
    r = solve_contact(coarse, 200.0)
    n_c = coarse.n_c
    U = r.displacement.reshape(coarse.n_r + 1, n_c, 2)
    mirror = U[:, (-np.arange(n_c)) % n_c]
    scale = np.abs(U).max()
    assert np.abs(U[..., 0] + mirror[..., 0]).max() < 1e-8 * scale
    assert np.abs(U[..., 1] - mirror[..., 1]).max() < 1e-8 * scale


def test_energy_balance_along_load_path(coarse):
    audit = energy_audit(coarse, 200.0, n_steps=20)
    assert audit["path_balance_rel"] < 0.01


def test_thin_ring_pinch_oracle():
    fem, analytic = thin_ring_pinch(n_c=256)
    assert abs(fem / analytic - 1) < 0.05


def test_mesh_refinement_drift():
    a = solve_contact(FemModel(n_r=4, n_c=128), 200.0).offset
    b = solve_contact(FemModel(n_r=8, n_c=256), 200.0).offset
    assert abs(a - b) / b < 0.02


# -- curve and calibration ------------------------------------------------------------

def test_sweep_properties(coarse, coarse_curve):
    assert len(sweep_curve(coarse, [])) == 0
    assert np.all(np.diff(coarse_curve.offsets) >= 0)
    assert sweep_curve(coarse, coarse_curve.forces[:3]) == LoadCurve(coarse_curve.forces[:3],
                                                                      coarse_curve.offsets[:3])
    with pytest.raises(ValueError):
        sweep_curve(coarse, [10.0, 5.0])


def _curve(offsets, kgs):
    return LoadCurve(tuple(G_ACCEL * k for k in kgs), tuple(offsets))


def test_exact_line_fit():
    x = [0.0, 1.0, 2.0, 3.0, 4.0]
    cal = fit_calibration(_curve(x, [2 * v for v in x]), kg_range=(0, 10))
    assert cal.slope == pytest.approx(2) and cal.intercept == pytest.approx(0, abs=1e-12)
    assert cal.r2 == pytest.approx(1) and cal.threshold == pytest.approx(0, abs=1e-9)


def test_outlier_fit_against_hand_ols():
    x = [0, 1, 2, 3, 4]
    y = [0, 2, 4, 9, 8]  # y = 2x with the fourth point lifted by 3
    n = len(x)
    sx, sy = sum(x), sum(y)
    sxx = sum(v * v for v in x)
    sxy = sum(a * b for a, b in zip(x, y))
    slope = Fraction(n * sxy - sx * sy, n * sxx - sx * sx)
    icpt = Fraction(sy, n) - slope * Fraction(sx, n)
    worst = max(abs(b - (slope * a + icpt)) for a, b in zip(x, y))
    cal = fit_calibration(_curve([float(v) for v in x], [float(v) for v in y]), kg_range=(0, 10))
    assert cal.slope == pytest.approx(float(slope), abs=1e-12)
    assert cal.intercept == pytest.approx(float(icpt), abs=1e-12)
    assert cal.threshold == pytest.approx(float(3 * worst / slope), abs=1e-12)
    assert cal.r2 < 1


def test_fit_errors():
    with pytest.raises(FitError):
        fit_calibration(_curve([1.0, 1.0, 1.0], [1.0, 2.0, 3.0]), kg_range=(0, 10))
    with pytest.raises(FitError):
        fit_calibration(_curve([1.0, 2.0], [1.0, 2.0]), kg_range=(0, 10))
    with pytest.raises(FitError):
        LoadCalibration(-1.0, 0.0, (0.0, 1.0), 0.1, 0.9)


def test_estimate_weight_definitions():
    cal = LoadCalibration(1.5, 0.0, (0.0, 20.0), 0.5, 0.99)
    assert estimate_weight(0.0, cal) == {"kg": 0.0, "overload": False}
    assert estimate_weight(20.0, cal)["kg"] == cal.max_kg
    assert not estimate_weight(20.5, cal)["overload"]
    assert estimate_weight(20.6, cal)["overload"]
    with pytest.raises(ValueError):
        estimate_weight(-0.1, cal)


@given(st.floats(0, 35))
def test_calibration_round_trip(kg):
    cal = LoadCalibration(1.37, -2.9, (0.0, 27.6), 6.0, 0.98)
    offset = (kg - cal.intercept) / cal.slope
    assert abs(estimate_weight(offset, cal)["kg"] - kg) < 1e-9


def test_fem_curve_calibration_and_overload(coarse, coarse_curve):
    cal = fit_calibration(coarse_curve)
    assert cal.slope > 0 and 0.9 < cal.r2 <= 1
    assert cal.valid_range[1] == max(coarse_curve.offsets)
    big = solve_contact(coarse, 60 * G_ACCEL).offset
    assert estimate_weight(big, cal)["overload"]


def test_protocol_noise_only_and_determinism(coarse_curve):
    cal = fit_calibration(coarse_curve)
    a = load_protocol(None, cal, truth="fit", seed=3)
    assert len(a["measurements"]) == 50
    # noise alone: sigma_kg = slope * 1% full scale, MAE about 0.8 sigma
    assert a["mae_kg"] < 2 * cal.slope * a["noise_sigma_mm"]
    assert a == load_protocol(None, cal, truth="fit", seed=3)
    with pytest.raises(ValueError):
        load_protocol(None, cal, truth="oracle")


# -- depth map offset and I/O -----------------------------------------------------------

def test_depthmap_offset_trivial_cases():
    g = FrameGeometry()
    base = np.full((g.crop_size, g.crop_size), SKIN_DEPTH_MM)
    assert offset_from_depthmap(base, base, g) == 0.0
    assert offset_from_depthmap(base - 1.0, base, g) == pytest.approx(1.0)
    with pytest.raises(DimensionError):
        offset_from_depthmap(np.zeros((10, 10)), 0.0, g)


@pytest.mark.parametrize("load", [0.2, 0.5, 1.1])
def test_depthmap_round_trip_with_renderer(load):
    g = FrameGeometry()
    n = g.crop_size
    yy, xx = np.mgrid[0:n, 0:n] + 0.5 - g.disk_radius
    r_mm = np.hypot(yy, xx) * g.mm_per_px
    height = -(r_mm ** 2) / (2 * 200.0)  # gentle dome, apex at the centre
    _, depth = render_tactile(height, g, load, 0, return_depth=True)
    assert abs(offset_from_depthmap(depth, SKIN_DEPTH_MM, g) - load) < 0.05


def test_curve_and_calibration_files(tmp_path, coarse_curve):
    path = coarse_curve.to_csv(tmp_path / "curve.csv")
    assert LoadCurve.from_csv(path) == coarse_curve
    cal = fit_calibration(coarse_curve)
    again = LoadCalibration.from_json(cal.to_json(tmp_path / "cal.json"))
    assert again == cal
    assert set(json.loads((tmp_path / "cal.json").read_text())) == {"slope", "intercept", "valid_range",
                                                                  "threshold", "r2"}


def test_vtk_dump_round_trip(tmp_path, coarse):
    r = solve_contact(coarse, 100.0)
    path = write_vtk(tmp_path / "field.vtk", coarse.mesh, r.displacement)
    pts, disp = read_vtk_points(path)
    assert np.array_equal(pts, coarse.mesh.nodes) and np.array_equal(disp, r.displacement)
    text = path.read_text()
    assert f"CELLS {len(coarse.mesh.elements)}" in text and "CELL_TYPES" in text
