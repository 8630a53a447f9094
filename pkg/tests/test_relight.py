import math

import numpy as np
import pytest

from relightkit.brdf import shade_directional
from relightkit.datagen import direction_grid, generate, scene_specs
from relightkit.geometry import cast_shadow_mask, unproject
from relightkit.imaging import ShapeError
from relightkit.neural.train import ModelConfigError, init_models
from relightkit.relight import (
    BasisStack,
    EnvironmentMap,
    RelightError,
    env_weights,
    evaluate,
    infer_batch,
    infer_relit,
    light_from_text,
    oracle_stack,
    relight_env,
    superpose,
)


@pytest.fixture(scope="module")
def samples():
    return generate(scene_specs(2, seed=8, width=32, height=32), direction_grid(1, 4), seed=8, n_train=0)


def test_superpose_linear():
    rng = np.random.default_rng(0)
    dirs = direction_grid(1, 3)
    imgs = rng.random((4, 3, 5, 5))
    stack = BasisStack(dirs, imgs)
    assert np.allclose(superpose(stack, [0, 0, 1, 0]), imgs[2])
    a, b = rng.random(4), rng.random(4)
    assert np.allclose(superpose(stack, a + b), superpose(stack, a) + superpose(stack, b))
    assert np.allclose(superpose(stack, 2 * a), 2 * superpose(stack, a))
    rgb = rng.random((4, 3))
    out = superpose(stack, rgb)
    assert np.allclose(out[1], np.tensordot(rgb[:, 1], imgs[:, 1], axes=1))


def test_superpose_errors():
    dirs = direction_grid(1, 3)
    stack = BasisStack(dirs, np.zeros((4, 3, 2, 2)))
    with pytest.raises(ShapeError):
        superpose(stack, np.ones(3))
    with pytest.raises(RelightError):
        superpose(stack, [1, -1, 0, 0])
    with pytest.raises(RelightError):
        BasisStack([[0, 0, 2]], np.zeros((1, 3, 2, 2)))
    with pytest.raises(RelightError):
        BasisStack([[0, 0, 1], [0, 0, 1]], np.zeros((2, 3, 2, 2)))
    with pytest.raises(ShapeError):
        BasisStack(dirs, np.zeros((3, 3, 2, 2)))


def test_environment_texels_cover_hemisphere():
    env = EnvironmentMap.uniform(1.0, 12, 40)
    d, sa = env.texels()
    assert np.isclose(sa.sum(), 2 * math.pi)
    assert np.allclose(np.linalg.norm(d, axis=1), 1) and (d[:, 2] > 0).all()


def test_env_weights_conserve_flux():
    env = EnvironmentMap(np.random.default_rng(1).random((3, 16, 64)))
    dirs = direction_grid()
    w = env_weights(env, dirs)
    _, sa = env.texels()
    assert np.allclose(w.sum(axis=0), (env.radiance.reshape(3, -1) * sa).sum(axis=1))
    # a uniform sky lands roughly evenly on the equal-area grid
    u = env_weights(EnvironmentMap.uniform(1.0, 64, 256), dirs)[:, 0]
    assert np.isclose(u.sum(), 2 * math.pi) and u.std() / u.mean() < 0.25


def test_environment_validation():
    with pytest.raises(ShapeError):
        EnvironmentMap(np.ones((1, 4, 4)))
    with pytest.raises(RelightError):
        EnvironmentMap(-np.ones((3, 4, 4)))


def test_light_from_text():
    assert np.allclose(light_from_text("0,0,2"), [0, 0, 1])
    assert np.allclose(light_from_text("1, 0, 1"), np.array([1, 0, 1]) / math.sqrt(2))
    for bad in ("0,0,-1", "1,0,0", "a,b,c", "1,2", "0,0,0", "nan,0,1"):
        with pytest.raises(RelightError):
            light_from_text(bad)


def test_oracle_reproduces_stored_relit(samples):
    for s in samples:
        for i, w in enumerate(s.directions):
            out = infer_relit(s.flash, s.depth, w, s.K, mode="oracle", maps=s.maps)
            assert np.mean((out - s.relit[i]) ** 2) < 1e-10


def test_relight_env_matches_direct_sum(samples):
    s = samples[0]
    stack = oracle_stack(s)
    env = EnvironmentMap(np.random.default_rng(2).random((3, 8, 32)))
    weights = env_weights(env, s.directions)
    pts = unproject(s.depth, s.K)
    direct = sum(
        shade_directional(s.maps, pts, w, weights[i], cast_shadow_mask(pts, w))
        for i, w in enumerate(s.directions)
    )
    assert np.abs(relight_env(stack, env) - direct).max() < 1e-5


def test_infer_errors(samples):
    s = samples[0]
    with pytest.raises(ModelConfigError):
        infer_relit(s.flash, s.depth, (0, 0, 1), s.K, mode="oracle")
    with pytest.raises(ModelConfigError):
        infer_relit(s.flash, s.depth, (0, 0, 1), s.K)
    with pytest.raises(ModelConfigError):
        infer_relit(s.flash, s.depth, (0, 0, 1), s.K, mode="magic", maps=s.maps)
    with pytest.raises(ShapeError):
        infer_relit(s.flash[:, :8], s.depth, (0, 0, 1), s.K, mode="oracle", maps=s.maps)


def test_network_inference_shapes(samples):
    s = samples[0]
    models = init_models(scale=0.125, seed=1)
    res = infer_batch(s.flash, s.depth, s.directions[:3], s.K, models, batch=2)
    assert res.relit.shape == (3, 3, 32, 32) and res.shadow.shape == (3, 1, 32, 32)
    assert ((res.shadow > 0) & (res.shadow < 1)).all()
    assert np.allclose(np.linalg.norm(res.maps.normal, axis=0), 1, atol=1e-4)
    one = infer_relit(s.flash, s.depth, s.directions[1], s.K, models)
    assert np.allclose(one, res[1], atol=1e-5)


def test_evaluate_layout(samples):
    rep = evaluate(samples, mode="oracle")
    assert rep["columns"] == ["Albedo", "Normal", "Roughness", "Shadow", "Relight"]
    assert set(rep["mse"]) == {"Clean", "Noisy"}
    clean, noisy = rep["mse"]["Clean"], rep["mse"]["Noisy"]
    assert clean[0] == 0 and clean[3] == 0 and clean[4] < 1e-10
    assert noisy[3] > 0 and noisy[4] > clean[4]
    rows = rep["psnr_by_direction"]["Clean"]["relight"]["rows"]
    assert len(rows) == len(samples[0].directions)
    assert rep["flash_baseline"]["relight_mse"] > 0
    with pytest.raises(ModelConfigError):
        evaluate(samples)
    with pytest.raises(RelightError):
        evaluate([])
