import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csf_intrinsic import colorspace as cs
from csf_intrinsic.errors import DegenerateImage, NonPositiveChannel, NotUnit
from csf_intrinsic.synth import generate_scene

from conftest import three_color_scene

unit_vectors = st.tuples(*[st.floats(-1, 1) for _ in range(3)]).filter(
    lambda t: np.linalg.norm(t) > 1e-3).map(lambda t: np.array(t) / np.linalg.norm(t))


def angle_deg(a, b):
    return float(np.degrees(np.arccos(np.clip(a @ b / np.linalg.norm(a) / np.linalg.norm(b), -1, 1))))


# --- basis -------------------------------------------------------------------

def test_basis_axis_aligned():
    b = cs.build_uvb_basis(np.array([0.0, 0.0, 1.0]))
    np.testing.assert_allclose(b.H.T @ b.H, np.eye(3), atol=1e-12)
    # least aligned axis is x (first on ties), u = n x e_x
    np.testing.assert_allclose(b.u, [0.0, 1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(b.v, np.cross(b.n, b.u))


def test_basis_white():
    b = cs.build_uvb_basis(cs.WHITE)
    np.testing.assert_allclose(b.H.T @ b.H, np.eye(3), atol=1e-12)


def test_basis_rejects_non_unit():
    with pytest.raises(NotUnit):
        cs.build_uvb_basis(np.array([1.0, 1.0, 0.0]))


@given(unit_vectors)
def test_basis_orthonormal_property(n):
    b = cs.build_uvb_basis(n)
    np.testing.assert_allclose(b.H.T @ b.H, np.eye(3), atol=1e-10)
    np.testing.assert_allclose(b.H @ b.H_inv, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(b.n, n)


# --- transforms ----------------------------------------------------------------

def test_unit_pixel_maps_to_origin():
    uvb = cs.to_uvb(np.ones((1, 1, 3)), cs.build_uvb_basis(cs.WHITE))
    assert uvb.u[0, 0] == uvb.v[0, 0] == uvb.b[0, 0] == 0.0


def test_scalar_multiple_moves_only_brightness(rng):
    basis = cs.build_uvb_basis(cs.WHITE)
    p = rng.uniform(0.1, 0.5, size=3)
    c = 1.7
    uvb = cs.to_uvb(np.stack([p, c * p])[None], basis)
    assert abs(uvb.u[0, 0] - uvb.u[0, 1]) < 1e-12 and abs(uvb.v[0, 0] - uvb.v[0, 1]) < 1e-12
    assert uvb.b[0, 1] - uvb.b[0, 0] == pytest.approx(np.log(c) * cs.WHITE.sum(), abs=1e-12)


def test_scalar_multiple_brightness_step_any_direction(rng):
    n = np.abs(rng.normal(size=3))
    n /= np.linalg.norm(n)
    p = rng.uniform(0.1, 0.5, size=3)
    uvb = cs.to_uvb(np.stack([p, 1.7 * p])[None], cs.build_uvb_basis(n))
    assert uvb.b[0, 1] - uvb.b[0, 0] == pytest.approx(np.log(1.7) * n.sum(), abs=1e-12)


def test_lit_and_shadowed_pixels_coincide_on_plane():
    ld, la = np.array([4.0, 2.0, 1.0]), np.array([0.3, 0.2, 0.25])
    r = np.array([0.5, 0.4, 0.7])
    img = np.stack([r * (ld + la), r * la])[None] / (r * (ld + la)).max()
    uvb = cs.to_uvb(img, cs.build_uvb_basis(cs.direction_from_illuminants(ld, la)))
    assert abs(uvb.u[0, 0] - uvb.u[0, 1]) < 1e-9 and abs(uvb.v[0, 0] - uvb.v[0, 1]) < 1e-9


def test_non_positive_channel():
    with pytest.raises(NonPositiveChannel):
        cs.to_uvb(np.zeros((1, 1, 3)), cs.build_uvb_basis(cs.WHITE), clamp_floor=0.0)
    # with the default floor zeros are clamped instead
    cs.to_uvb(np.zeros((1, 1, 3)), cs.build_uvb_basis(cs.WHITE))


@settings(max_examples=50)
@given(unit_vectors, st.integers(0, 2**31 - 1))
def test_round_trip_property(n, seed):
    img = np.random.default_rng(seed).uniform(1e-3, 1.0, size=(4, 5, 3))
    basis = cs.build_uvb_basis(n)
    back = cs.from_uvb(cs.to_uvb(img, basis), basis)
    assert np.abs(np.log(back) - np.log(img)).max() < 1e-9


def test_brightness_is_log_projection(stripe_scene):
    sc = stripe_scene
    uvb = cs.to_uvb(sc.image, cs.build_uvb_basis(sc.n))
    np.testing.assert_allclose(uvb.b, np.log(sc.image) @ sc.n, atol=1e-12)
    # brightness factorizes into shading and reflectance brightness
    np.testing.assert_allclose(uvb.b, sc.sb + sc.rb, atol=1e-12)


# --- shading recovery ------------------------------------------------------------

def test_recover_zero_shading(rng):
    img = rng.uniform(0.1, 1, size=(3, 4, 3))
    basis = cs.build_uvb_basis(cs.WHITE)
    res = cs.recover_shading(np.zeros((3, 4)), cs.to_uvb(img, basis), basis, img)
    np.testing.assert_allclose(res.shading, 1.0)
    np.testing.assert_allclose(res.reflectance, img)


def test_recover_achromatic_direction(rng):
    img = rng.uniform(0.1, 1, size=(2, 2, 3))
    basis = cs.build_uvb_basis(cs.WHITE)
    sb = np.full((2, 2), 0.3)
    res = cs.recover_shading(sb, cs.to_uvb(img, basis), basis, img)
    np.testing.assert_allclose(res.shading, np.exp(0.3 / np.sqrt(3)), rtol=1e-12)


def test_recover_true_shading_gives_true_reflectance():
    # with gamma in {0, 1} the true log shading lies exactly along n
    img, labels, gamma = three_color_scene([0.0, 1.0, 0.0, 1.0], ambient=(0.3, 0.2, 0.25))
    ld, la = np.array([4.0, 2.0, 1.0]), np.array([0.3, 0.2, 0.25])
    n = cs.direction_from_illuminants(ld, la)
    shading = (gamma[..., None] * ld + la) / (ld + la)
    truth_r = img / shading
    basis = cs.build_uvb_basis(n)
    res = cs.recover_shading(np.log(shading) @ n, cs.to_uvb(img, basis), basis, img)
    np.testing.assert_allclose(res.reflectance, truth_r, rtol=1e-6)


@settings(max_examples=30)
@given(unit_vectors.map(np.abs), st.integers(0, 2**31 - 1))
def test_shading_times_reflectance_property(n, seed):
    rng = np.random.default_rng(seed)
    img = rng.uniform(1e-3, 1.0, size=(3, 3, 3))
    basis = cs.build_uvb_basis(n / np.linalg.norm(n))
    res = cs.recover_shading(rng.normal(size=(3, 3)), cs.to_uvb(img, basis), basis, img)
    np.testing.assert_allclose(res.shading * res.reflectance, img, rtol=1e-6)
    assert (res.shading > 0).all() and (res.reflectance > 0).all()


# --- direction search --------------------------------------------------------------

def test_direction_binary_gamma_example():
    # lit and fully shadowed bands: the closed form is exact
    img, _, _ = three_color_scene([0.0, 1.0, 0.0, 1.0])
    n_true = cs.direction_from_illuminants((4, 2, 1), (0.2, 0.2, 0.2))
    assert angle_deg(cs.estimate_brightening_direction(img), n_true) < 2.0


@pytest.mark.xfail(strict=True, reason="intermediate gammas with a chromatic direct light "
                   "lie on a curve; its entropy minimum is ~7 degrees from the closed form")
def test_direction_graded_gamma_example():
    img, _, _ = three_color_scene(np.linspace(0.1, 1.0, 10))
    n_true = cs.direction_from_illuminants((4, 2, 1), (0.2, 0.2, 0.2))
    assert angle_deg(cs.estimate_brightening_direction(img), n_true) < 2.0


def test_direction_gray_lights():
    img, _, _ = three_color_scene([0.0, 1.0, 0.5], direct=(0.6, 0.6, 0.6), ambient=(0.2, 0.2, 0.2))
    n = cs.estimate_brightening_direction(img)
    # directions this close to white tie in entropy; ties go to the first grid cell
    assert angle_deg(n, cs.WHITE) < 1.0


def test_direction_degenerate():
    with pytest.raises(DegenerateImage):
        cs.estimate_brightening_direction(np.full((5, 5, 3), 0.4))


def test_direction_scale_invariant():
    img, _, _ = three_color_scene([0.0, 1.0, 0.0, 1.0], size=30)
    img = 0.2 + 0.8 * img  # keep away from the clamp floor
    a = cs.estimate_brightening_direction(img)
    b = cs.estimate_brightening_direction(0.5 * img)
    np.testing.assert_array_equal(a, b)


def test_direction_unit_and_in_octant(stripe_scene):
    n = cs.estimate_brightening_direction(stripe_scene.image)
    assert abs(np.linalg.norm(n) - 1) < 1e-12 and (n >= 0).all()
    assert angle_deg(n, stripe_scene.n) < 2.0


def test_plane_entropy_of_single_point_is_zero():
    assert cs.plane_entropy(np.zeros((10, 3)), cs.WHITE) == 0.0
