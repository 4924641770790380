import numpy as np
import pytest

from prgflow.errors import ParameterDomainError
from prgflow.warps import (
    PixelWarp,
    WarpModel,
    WarpParams,
    compose,
    invert,
    matrix_to_params,
    params_to_pixel_warp,
    warp_points,
)

PS = WarpModel.PSEUDO_SIMILARITY


def _rand_params(rng, model=PS):
    vec = rng.uniform(-0.25, 0.25, model.dof)
    return WarpParams.from_vector(vec, model)


def test_identity_matrix():
    w = params_to_pixel_warp(WarpParams.identity(), 128, 128)
    assert np.allclose(w.m, np.eye(3))


def test_pixel_mapping_translation():
    h = WarpParams(s=0.0, tx=0.2, ty=0.0)
    w = params_to_pixel_warp(h, 128, 128)
    out = warp_points(w, [(64.0, 64.0)])
    assert np.allclose(out[0], (76.8, 64.0))


def test_pixel_mapping_scale():
    h = WarpParams(s=0.1, tx=0.0, ty=0.0)
    w = params_to_pixel_warp(h, 128, 128)
    out = warp_points(w, [(128.0, 128.0)])
    assert np.allclose(out[0], (134.4, 134.4))
    # image center is fixed under pure scale
    assert np.allclose(warp_points(w, [(64.0, 64.0)])[0], (64.0, 64.0))


def test_compose_identity():
    h = WarpParams(s=0.07, tx=-0.04, ty=0.11)
    c = compose(h, WarpParams.identity())
    assert np.allclose(c.vector(), h.vector(), atol=1e-12)


def test_compose_translations():
    a = WarpParams(s=0.0, tx=0.1, ty=0.0)
    b = WarpParams(s=0.0, tx=0.05, ty=0.0)
    c = compose(a, b)
    assert np.allclose(c.vector(), (0.0, 0.15, 0.0), atol=1e-12)


def test_compose_scales():
    a = WarpParams(s=0.1, tx=0.0, ty=0.0)
    c = compose(a, a)
    assert abs(c.s - 0.21) < 1e-12


def test_compose_matches_matrix_product():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = _rand_params(rng), _rand_params(rng)
        wa = params_to_pixel_warp(a, 128, 128).m
        wb = params_to_pixel_warp(b, 128, 128).m
        wc = params_to_pixel_warp(compose(a, b), 128, 128).m
        assert np.allclose(wc, wa @ wb, rtol=1e-12, atol=1e-12)


def test_invert():
    h = WarpParams(s=0.0, tx=0.3, ty=-0.1)
    inv = invert(h)
    assert np.allclose(inv.vector(), (0.0, -0.3, 0.1), atol=1e-12)
    hs = WarpParams(s=0.1, tx=0.0, ty=0.0)
    assert abs(invert(hs).s - (1.0 / 1.1 - 1.0)) < 1e-12


def test_invert_is_group_inverse():
    rng = np.random.default_rng(1)
    for _ in range(50):
        h = _rand_params(rng)
        c = compose(h, invert(h))
        assert np.allclose(c.vector(), 0.0, atol=1e-12)


def test_warp_points_identity():
    w = PixelWarp(np.eye(3), 64, 64)
    assert np.allclose(warp_points(w, [(10.0, 20.0)])[0], (10.0, 20.0))


def test_matrix_to_params_round_trip_all_models():
    rng = np.random.default_rng(2)
    for model in WarpModel:
        for _ in range(20):
            h = _rand_params(rng, model)
            w = params_to_pixel_warp(h, 128, 128)
            back = matrix_to_params(w, model)
            assert np.allclose(back.vector(), h.vector(), atol=1e-10)


def test_matrix_to_params_identity():
    h = matrix_to_params(PixelWarp(np.eye(3), 128, 128), PS)
    assert np.allclose(h.vector(), 0.0, atol=1e-12)


def test_matrix_to_params_rejects_perturbation_gracefully():
    from prgflow.warps import normalization_matrix, normalized_matrix

    h = WarpParams(s=0.12, tx=-0.05, ty=0.08)
    mn = normalized_matrix(h).copy()
    mn[2, 0] += 1e-6  # perspective leak in the normalized domain
    m = normalization_matrix(128, 128)
    w = PixelWarp(m @ mn @ np.linalg.inv(m), 128, 128)
    back = matrix_to_params(w, PS)
    assert np.allclose(back.vector(), h.vector(), atol=1e-4)


def test_model_nesting_exact():
    t = WarpParams.from_vector([0.13, -0.07], WarpModel.TRANSLATION)
    lifted = t.lift(PS)
    w = params_to_pixel_warp(lifted, 128, 128)
    back = matrix_to_params(w, WarpModel.TRANSLATION)
    assert np.allclose(back.vector(), t.vector(), atol=1e-12)


def test_injective_parameterization():
    rng = np.random.default_rng(3)
    for _ in range(30):
        a, b = _rand_params(rng), _rand_params(rng)
        if np.max(np.abs(a.vector() - b.vector())) < 1e-6:
            continue
        wa = params_to_pixel_warp(a, 128, 128).m
        wb = params_to_pixel_warp(b, 128, 128).m
        assert np.max(np.abs(wa - wb)) >= 1e-7


def test_domain_error_on_singular_scale():
    with pytest.raises(ParameterDomainError):
        params_to_pixel_warp(WarpParams(s=-1.0, tx=0.0, ty=0.0), 64, 64)
    with pytest.raises(ParameterDomainError):
        invert(WarpParams(s=-1.0, tx=0.0, ty=0.0))


def test_similarity_rotation():
    h = WarpParams.from_vector([0.0, 0.0, 0.0, np.pi / 2], WarpModel.SIMILARITY)
    w = params_to_pixel_warp(h, 128, 128)
    # quarter turn about the center: (96, 64) -> (64, 96)
    out = warp_points(w, [(96.0, 64.0)])
    assert np.allclose(out[0], (64.0, 96.0), atol=1e-9)
