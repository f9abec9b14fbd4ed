import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import gaussian_filter, label, median_filter
from scipy.special import erf
from skimage.morphology import skeletonize

from vtire.errors import DimensionError
from vtire.modality import segment_regions
from vtire.synth import (DAMAGE_STATES, OBJECT_KINDS, CorruptionSpec, FrameGeometry,
                         apply_corruption, class_names, compose_raw_frame, crack_sample,
                         damage_sample, derive_seed, empty_imprint, gen_crack, gen_damage,
                         gen_external, gen_object_imprint, gen_terrain, indentation, n_classes,
                         object_sample, radial_power_spectrum, render_tactile, render_visual,
                         stream, terrain_sample)
from vtire.synth.objects import PUNCTURE_DIAMETER_PX, annulus_mask, euler_number
from vtire.synth.render import TACTILE_BASE
from vtire.synth.terrain import poisson_disk, terrain_config

G = FrameGeometry()


# -- rng and geometry ---------------------------------------------------------

def test_streams_are_reproducible_and_independent():
    a = stream(7, "tactile-noise").random(5)
    assert np.array_equal(a, stream(7, "tactile-noise").random(5))
    assert not np.array_equal(a, stream(7, "visual-noise").random(5))
    assert not np.array_equal(a, stream(8, "tactile-noise").random(5))
    assert derive_seed(1, "x") == derive_seed(1, "x") != derive_seed(1, "y")


def test_geometry_regions_disjoint_and_inside_frame():
    frame = np.zeros((G.frame_size, G.frame_size), dtype=int)
    frame += G.frame_disk_mask()
    for s in G.panel_slices():
        frame[s] += 1
    assert frame.max() == 1
    assert G.crop_size == 88 and G.visual_shape == (128, 32)


def test_geometry_validation():
    with pytest.raises(ValueError):
        FrameGeometry(mm_per_px=0)
    with pytest.raises(ValueError):
        FrameGeometry(disk_radius=60)


# -- terrain ------------------------------------------------------------------

def test_terrain_classes_frozen_config():
    cfg = terrain_config()
    assert cfg["version"] >= 1
    assert n_classes() == 12 and len(set(class_names())) == 12


@pytest.mark.parametrize("cid", range(12))
def test_terrain_deterministic(cid):
    a, b = gen_terrain(cid, 42), gen_terrain(cid, 42)
    assert np.array_equal(a.heightfield, b.heightfield) and np.array_equal(a.albedo, b.albedo)
    assert not np.array_equal(a.albedo, gen_terrain(cid, 43).albedo)
    assert a.heightfield.shape == (128, 128)


def test_terrain_invalid_class():
    with pytest.raises(ValueError, match="out of range"):
        gen_terrain(12, 0)


@pytest.mark.parametrize("name", ["brick_small", "brick_large"])
def test_brick_grooves_form_grid_with_pitch(name):
    cid = class_names().index(name)
    p = terrain_config()["classes"][cid]
    h = gen_terrain(cid, 3).heightfield
    groove = h < -0.5 * p["groove_mm"]
    # horizontal mortar courses: rows that are groove almost everywhere
    rows = np.flatnonzero(groove.mean(axis=1) > 0.9)
    starts = rows[np.r_[True, np.diff(rows) > 1]]
    assert len(starts) >= 3
    assert np.all(np.abs(np.diff(starts) - p["pitch_y_px"]) <= 1)
    # vertical joints inside one course repeat at pitch_x
    r = starts[0] + p["mortar_px"] + p["pitch_y_px"] // 3
    cols = np.flatnonzero(groove[r])
    cstarts = cols[np.r_[True, np.diff(cols) > 1]]
    assert np.all(np.abs(np.diff(cstarts) - p["pitch_x_px"]) <= 1)


def test_spectra_separate_classes():
    """Distance between class-mean spectra beats the within-class spread (20 seeds)."""
    S = np.array([[radial_power_spectrum(gen_terrain(c, s).albedo) for s in range(20)]
                  for c in range(12)])
    means = S.mean(axis=1)
    intra = np.linalg.norm(S - means[:, None], axis=2).mean(axis=1)
    for a in range(12):
        for b in range(a + 1, 12):
            assert np.linalg.norm(means[a] - means[b]) > max(intra[a], intra[b]), (a, b)


def test_poisson_disk_respects_min_distance():
    pts = poisson_disk(64, 5.0, np.random.default_rng(0))
    d = np.hypot(*(pts[:, None] - pts[None]).transpose(2, 0, 1))
    np.fill_diagonal(d, np.inf)
    assert len(pts) > 20 and d.min() >= 5.0 - 1e-9


# -- tactile ------------------------------------------------------------------

def test_zero_load_is_uniform_base():
    h = gen_terrain(0, 1).heightfield
    img = render_tactile(h, G, 0.0, seed=0, noise_sigma=0)
    assert np.all(img[G.disk_mask()] == TACTILE_BASE)
    assert np.all(img[~G.disk_mask()] == G.background)


def test_negative_load_rejected():
    with pytest.raises(ValueError):
        render_tactile(np.zeros((88, 88)), G, -0.1, 0)


def _sphere(R_mm, n=88):
    yy, xx = (np.mgrid[0:n, 0:n] + 0.5 - n / 2) * G.mm_per_px
    return np.sqrt(np.maximum(R_mm ** 2 - yy ** 2 - xx ** 2, 0.0))


def test_sphere_imprint_radius_grows_with_load():
    h = _sphere(3.0)
    areas = [np.count_nonzero(render_tactile(h, G, d, 0, noise_sigma=0) > TACTILE_BASE)
             for d in (0.1, 0.3, 0.6, 1.0, 1.5)]
    assert all(a < b for a, b in zip(areas, areas[1:]))


@pytest.mark.parametrize("delta", [0.2, 0.5, 1.0, 2.0])
def test_sphere_imprint_area_matches_cap_oracle(delta):
    R = 3.0
    p = indentation(_sphere(R), G, delta)
    area_mm2 = np.count_nonzero(p > 0) * G.mm_per_px ** 2
    oracle = np.pi * (R ** 2 - (R - delta) ** 2)
    assert area_mm2 == pytest.approx(oracle, rel=0.05)


def test_tactile_depth_channel():
    h = _sphere(3.0)
    img, depth = render_tactile(h, G, 0.5, 0, return_depth=True)
    assert depth.min() == pytest.approx(10.0 - 0.5, abs=1e-9)
    assert img.shape == depth.shape == (88, 88)


# -- visual and corruptions ----------------------------------------------------

def test_constant_albedo_stays_constant():
    v = render_visual(np.full((128, 128), 90.0), G, 0, vignette=0, noise_sigma=0)
    assert v.shape == G.visual_shape and np.all(v == 90)


def test_visual_deterministic_per_seed():
    alb = gen_terrain(4, 0).albedo
    assert np.array_equal(render_visual(alb, G, 5), render_visual(alb, G, 5))


def test_blurred_edge_matches_erf_profile():
    lo, hi = 50.0, 200.0
    alb = np.full((128, 128), lo)
    alb[64:] = hi
    v = render_visual(alb, G, 0, blur_sigma=1.0, vignette=0, noise_sigma=0)[:, 0].astype(float)
    y = np.arange(128) + 0.5
    expected = lo + (hi - lo) * 0.5 * (1 + erf((y - 64) / np.sqrt(2)))
    assert np.max(np.abs(v - expected)) / (hi - lo) < 0.02


def test_corruption_identities():
    img = gen_terrain(2, 0).albedo.astype(np.uint8)
    assert np.array_equal(apply_corruption(img, CorruptionSpec("none"), 0), img)
    assert np.array_equal(apply_corruption(img, CorruptionSpec("salt_pepper", density=0), 0), img)
    assert np.array_equal(apply_corruption(img, CorruptionSpec("dark", gain=1.0), 0), img)


@given(st.integers(0, 2**32), st.sampled_from(["none", "salt_pepper", "smoke", "dark"]))
@settings(max_examples=20, deadline=None)
def test_corruption_deterministic_and_in_range(seed, kind):
    img = np.random.default_rng(seed).integers(0, 256, (32, 32)).astype(np.uint8)
    spec = CorruptionSpec(kind)
    a, b = apply_corruption(img, spec, seed), apply_corruption(img, spec, seed)
    assert np.array_equal(a, b) and a.dtype == np.uint8


def test_salt_pepper_flip_fraction():
    img = np.full((128, 128), 128, dtype=np.uint8)
    out = apply_corruption(img, CorruptionSpec("salt_pepper", density=0.1), 11)
    flipped = out != 128
    assert flipped.mean() == pytest.approx(0.1, abs=0.02)
    assert set(np.unique(out[flipped])) <= {0, 255}
    assert 0.4 < (out[flipped] == 255).mean() < 0.6


@pytest.mark.parametrize("kw", [dict(density=1.5), dict(gain=0), dict(haze_alpha=2),
                                dict(blur_sigma=-1), dict(kind="fog")])
def test_corruption_spec_validation(kw):
    with pytest.raises(ValueError):
        CorruptionSpec(**{"kind": "smoke", **kw})


def test_dark_scales_mean():
    alb = gen_terrain(5, 0).albedo
    sunny = gen_external(alb, "sunny", 3, noise_sigma=0).astype(float)
    dark = gen_external(alb, "dark", 3, noise_sigma=0).astype(float)
    assert dark.mean() == pytest.approx(0.15 * sunny.mean(), abs=0.6)


def _corr_length(img):
    x = img.astype(float) - img.mean()
    f = np.fft.fft2(x)
    ac = np.real(np.fft.ifft2(f * np.conj(f)))
    ac /= ac[0, 0]
    row = 0.5 * (ac[0, : img.shape[1] // 2] + ac[: img.shape[0] // 2, 0])
    below = np.flatnonzero(row < np.exp(-1))
    return below[0] if below.size else len(row)


@pytest.mark.parametrize("cid", [0, 4, 8])
def test_smoke_increases_autocorrelation_length(cid):
    alb = gen_terrain(cid, 1).albedo
    sunny = gen_external(alb, "sunny", 2, noise_sigma=0)
    smoke = gen_external(alb, "smoke", 2, noise_sigma=0)
    assert _corr_length(smoke) > _corr_length(sunny)


def test_external_shape_and_bad_condition():
    alb = gen_terrain(0, 0).albedo
    assert gen_external(alb, "sunny", 0).shape == (64, 64)
    with pytest.raises(ValueError):
        gen_external(alb, "fog", 0)


# -- compose ------------------------------------------------------------------

def test_compose_then_crop_roundtrip():
    s = terrain_sample(3, 9)
    t, v = segment_regions(s.raw_frame, G)
    assert np.array_equal(t, s.tactile_crop) and np.array_equal(v, s.visual_crop)


def test_compose_background_and_shape_errors():
    frame = compose_raw_frame(np.full((88, 88), 100, np.uint8), np.full((128, 32), 50, np.uint8), G)
    painted = G.frame_disk_mask().copy()
    for s in G.panel_slices():
        painted[s] = True
    assert np.all(frame[~painted] == G.background)
    with pytest.raises(DimensionError):
        compose_raw_frame(np.zeros((80, 80)), np.zeros((128, 32)), G)


# -- objects ------------------------------------------------------------------

@pytest.mark.parametrize("kind", OBJECT_KINDS)
def test_object_imprint_deterministic_and_masked_to_disk(kind):
    a, b = gen_object_imprint(kind, 5), gen_object_imprint(kind, 5)
    assert np.array_equal(a["image"], b["image"]) and np.array_equal(a["mask"], b["mask"])
    assert a["mask"].any() and not a["mask"][~G.disk_mask()].any()
    # contact pixels are bright, free skin is at base level
    assert a["image"][a["mask"]].mean() > TACTILE_BASE + 100
    assert abs(a["image"][G.disk_mask() & ~a["mask"]].mean() - TACTILE_BASE) < 2


@pytest.mark.parametrize("seed", range(5))
def test_nut_has_hexagonal_hole(seed):
    o = gen_object_imprint("nut", seed)
    assert euler_number(o["mask"]) == 0


def test_euler_number_basics():
    m = np.zeros((9, 9), bool)
    m[2:7, 2:7] = True
    assert euler_number(m) == 1
    m[4, 4] = False
    assert euler_number(m) == 0


@pytest.mark.parametrize("cy,cx", [(44.0, 44.0), (40.3, 47.8)])
def test_lens_annulus_area(cy, cx):
    ro, ri = 10.0, 6.0
    area = annulus_mask(88, cy, cx, ro, ri).sum()
    assert area == pytest.approx(np.pi * (ro ** 2 - ri ** 2), rel=0.03)


def test_empty_imprint_has_no_contact():
    e = empty_imprint(1)
    assert not e["mask"].any()
    assert abs(e["image"][G.disk_mask()].mean() - TACTILE_BASE) < 1


def test_unknown_object():
    with pytest.raises(ValueError):
        gen_object_imprint("spoon", 0)


# -- cracks -------------------------------------------------------------------

def test_crack_width_half_mm_is_five_px():
    c = gen_crack(0.5, 4, straight=True)
    assert c["width_px"] == pytest.approx(5.0)
    # straight chord: mask area / in-disk length = stroke width
    width = c["mask"].sum() / c["length_px"]
    assert abs(width - 5) <= 1
    # cross-section perpendicular to the chord
    p0, p1 = c["path"]
    direction = (p1 - p0) / np.linalg.norm(p1 - p0)
    normal = np.array([-direction[1], direction[0]])
    mid = (p0 + p1) / 2
    if np.hypot(*(mid - 44)) > 30:
        mid = p0 + direction * np.dot(np.array([44.0, 44.0]) - p0, direction)
    samples = mid + np.outer(np.arange(-10, 10.01, 0.05), normal)
    iy, ix = np.floor(samples).astype(int).T
    across = c["mask"][iy, ix]
    assert abs(across.sum() * 0.05 - 5) <= 1


@pytest.mark.parametrize("seed", range(6))
def test_crack_skeleton_length(seed):
    c = gen_crack(0.4, seed)
    skel = skeletonize(c["mask"])
    ys, xs = np.nonzero(skel)
    # 8-connected skeleton length: axial steps 1, diagonal steps sqrt(2)
    s = set(zip(ys.tolist(), xs.tolist()))
    axial = sum((y, x + 1) in s for y, x in s) + sum((y + 1, x) in s for y, x in s)
    diag = sum(((y + 1, x + 1) in s) and (y, x + 1) not in s and (y + 1, x) not in s for y, x in s) \
        + sum(((y + 1, x - 1) in s) and (y, x - 1) not in s and (y + 1, x) not in s for y, x in s)
    length = axial + np.sqrt(2) * diag
    assert length == pytest.approx(c["length_px"], rel=0.10)


def test_crack_deterministic_and_subpixel_partial_intensity():
    a, b = gen_crack(0.3, 2), gen_crack(0.3, 2)
    assert np.array_equal(a["image"], b["image"])
    thin = gen_crack(0.04, 2, noise_sigma=0)
    # 0.4 px crack: partial darkening, no pixel reaches half coverage
    assert not thin["mask"].any()
    assert thin["coverage"].max() == pytest.approx(0.4, abs=0.01)
    assert thin["image"][G.disk_mask()].min() < thin["image"][G.disk_mask()].max()


def test_crack_mask_only_in_disk():
    c = gen_crack(1.0, 8)
    assert not c["mask"][~G.disk_mask()].any()


# -- damage -------------------------------------------------------------------

def test_normal_damage_without_overlay_is_base():
    d = gen_damage("normal", 3, terrain_overlay=False, salt_pepper=0, noise_sigma=0)
    assert np.all(d["image"][G.disk_mask()] == TACTILE_BASE)


@pytest.mark.parametrize("seed", range(10))
def test_puncture_diameter_in_range(seed):
    d = gen_damage("puncture", seed, terrain_overlay=False, salt_pepper=0, noise_sigma=0)
    lo, hi = PUNCTURE_DIAMETER_PX
    assert lo <= d["diameter_px"] <= hi
    core = label(d["image"] == 250)[0]
    area = np.bincount(core.ravel())[1:].max()
    assert np.pi * (lo / 2 - 1) ** 2 <= area <= np.pi * (hi / 2 + 1) ** 2


def _band_variance(img):
    disk = G.disk_mask()
    x = median_filter(img.astype(float), 3)
    x[~disk] = np.median(x[disk])
    band = gaussian_filter(x, 1) - gaussian_filter(x, 12)
    return band[disk].var()


def test_wear_separates_from_normal_by_band_variance():
    wear = [_band_variance(gen_damage("wear", s, terrain_overlay=False)["image"]) for s in range(50)]
    normal = [_band_variance(gen_damage("normal", s, terrain_overlay=False)["image"])
              for s in range(50)]
    assert min(wear) > max(normal)


def test_damage_salt_pepper_stays_in_disk():
    d = gen_damage("crack", 1)
    assert np.all(d["image"][~G.disk_mask()] == G.background)
    assert ((d["image"] == 255) & G.disk_mask()).any()


def test_unknown_damage_state():
    with pytest.raises(ValueError):
        gen_damage("melted", 0)


# -- samples ------------------------------------------------------------------

def test_samples_regenerate_bit_identically():
    for make in (lambda: terrain_sample(7, 123), lambda: damage_sample("wear", 5),
                 lambda: object_sample("usb", 9), lambda: crack_sample(0.3, 2)):
        a, b = make(), make()
        assert np.array_equal(a.raw_frame, b.raw_frame)
        if a.external_image is not None:
            assert np.array_equal(a.external_image, b.external_image)
        if a.contact_mask is not None:
            assert np.array_equal(a.contact_mask, b.contact_mask)
        assert a.params == b.params


def test_sample_labels():
    assert terrain_sample(4, 0).label == 4
    assert damage_sample("puncture", 0).label == DAMAGE_STATES.index("puncture")
    o = object_sample("lens", 1)
    assert not o.contact_mask[~G.disk_mask()].any()


def test_external_condition_cycles():
    conds = {terrain_sample(0, s).params["external_condition"] for s in range(12)}
    assert conds == {"sunny", "smoke", "dark"}
