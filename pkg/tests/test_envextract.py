import numpy as np
import pytest

from irtps.core import AlbedoMap, HeightField, LightSet, NormalMap, Placement, ring_lights
from irtps.envextract import EnvIntensityImage, dump_env, extract, extract_all, fill_sparse
from irtps.io import read_pfm, read_pgm
from irtps.scene import WALLS, EnvironmentBox, make_sphere

PL = Placement()


@pytest.fixture(scope="module")
def sphere_maps():
    obj = make_sphere((48, 48), PL, 0.9, (0.8, 0.8, 0.8))
    return obj.ground_truth(PL)


def grey_box(a=0.8, size=(5, 5, 4), front=2.0):
    return EnvironmentBox.from_size(size, front, {w: (a, a, a) for w in WALLS})


def test_white_wall_one_bounce():
    # a point right against a white wall facing it: nearly the whole hemisphere sees
    # that wall, whose direct radiance is l . n_wall = 0.6
    env = EnvironmentBox((-2, -2, -2), (1e-3, 2, 1),
                         {w: (0, 0, 0) for w in WALLS} | {"right": (1, 1, 1)})
    h = HeightField(np.zeros((1, 1)))
    n = NormalMap(np.array([[[1.0, 0, 0]]]))
    a = AlbedoMap(np.ones((1, 1, 3)))
    vals = [extract(h, n, a, env, [-0.6, 0, 0.8], 1, s).values[0, 0, 0] for s in range(10_000)]
    assert np.mean(vals) == pytest.approx(0.6, rel=0.02)


def test_black_walls_zero(sphere_maps):
    e = extract(*sphere_maps, EnvironmentBox.black(), ring_lights().directions[0], 2, 0)
    assert e.mask.any() and np.all(e.values == 0)
    dense = extract_all(*sphere_maps, EnvironmentBox.black(), ring_lights(), 3, 0)
    assert len(dense) == 8 and all(np.all(d == 0) for d in dense)


def test_deeper_is_dimmer(sphere_maps):
    # a deep box so most chains stay inside; the conditional means then fall with depth
    env = grey_box(0.8, (3, 3, 8), 6.0)
    means = []
    for r in (1, 2, 3):
        _, sp = extract_all(*sphere_maps, env, ring_lights(), r, 5, return_sparse=True)
        means.append(np.mean([e.values[e.mask].mean() for e in sp]))
    assert means[2] < means[1] < means[0]


@pytest.mark.parametrize("r", [1, 2, 3])
def test_wall_albedo_scaling_is_exact(sphere_maps, r):
    env = EnvironmentBox()
    lights = ring_lights()
    _, a = extract_all(*sphere_maps, env, lights, r, 9, return_sparse=True)
    _, b = extract_all(*sphere_maps, env.scaled(0.5), lights, r, 9, return_sparse=True)
    for ea, eb in zip(a, b):
        np.testing.assert_array_equal(ea.mask, eb.mask)
        assert np.abs(eb.values - 0.5 ** r * ea.values).max() <= 1e-12


def test_nonnegative_masked_zero_and_coverage(sphere_maps):
    for r in (1, 2, 3):
        e = extract(*sphere_maps, EnvironmentBox(), ring_lights().directions[3], r, 1)
        assert np.all(e.values >= 0)
        assert np.all(e.values[~e.mask] == 0)
    e = extract(*sphere_maps, EnvironmentBox(), ring_lights().directions[3], 1, 1)
    assert e.mask[sphere_maps[0].mask].mean() > 0.4


def test_deterministic_and_seed_dependent(sphere_maps):
    l = ring_lights().directions[2]
    a = extract(*sphere_maps, EnvironmentBox(), l, 2, 4)
    b = extract(*sphere_maps, EnvironmentBox(), l, 2, 4)
    c = extract(*sphere_maps, EnvironmentBox(), l, 2, 5)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_permuting_lights_permutes_outputs(sphere_maps):
    lights = ring_lights()
    perm = np.array([3, 0, 7, 1, 6, 2, 5, 4])
    a = extract_all(*sphere_maps, EnvironmentBox(), lights, 2, 8)
    b = extract_all(*sphere_maps, EnvironmentBox(), lights.subset(perm), 2, 8)
    for k, p in enumerate(perm):
        np.testing.assert_array_equal(b[k], a[p])


def test_extract_matches_extract_all(sphere_maps):
    lights = ring_lights()
    dense, sparse = extract_all(*sphere_maps, EnvironmentBox(), lights, 1, 3, return_sparse=True)
    one = extract(*sphere_maps, EnvironmentBox(), lights.directions[5], 1, 3, light_index=5)
    np.testing.assert_array_equal(one.values, sparse[5].values)
    np.testing.assert_array_equal(fill_sparse(one), dense[5])


def test_depth_validation(sphere_maps):
    with pytest.raises(ValueError):
        extract(*sphere_maps, EnvironmentBox(), [0, 0, 1], 4, 0)


def _img(values, mask, support=None):
    return EnvIntensityImage(values, mask, 1, 0, support)


def test_fill_full_mask_identity(rng):
    v = rng.random((6, 7, 3))
    np.testing.assert_array_equal(fill_sparse(_img(v, np.ones((6, 7), bool))), v)


def test_fill_single_sample_constant():
    v = np.zeros((5, 5, 3))
    v[2, 3] = (0.1, 0.2, 0.3)
    m = np.zeros((5, 5), bool)
    m[2, 3] = True
    out = fill_sparse(_img(v, m))
    np.testing.assert_allclose(out, np.broadcast_to([0.1, 0.2, 0.3], (5, 5, 3)), rtol=1e-15)


def test_fill_empty_mask_errors():
    with pytest.raises(ValueError, match="no samples to interpolate"):
        fill_sparse(_img(np.zeros((3, 3, 3)), np.zeros((3, 3), bool)))


def test_fill_keeps_samples_and_silhouette(rng):
    v = rng.random((20, 20, 3))
    support = np.zeros((20, 20), bool)
    support[4:16, 4:16] = True
    m = (rng.random((20, 20)) < 0.3) & support
    v[~m] = 0
    out = fill_sparse(_img(v, m, support))
    np.testing.assert_array_equal(out[m], v[m])
    assert np.all(out[~support] == 0)


def test_fill_recovers_plane(rng):
    i, j = np.mgrid[0:64, 0:64]
    plane = 0.3 * j - 0.2 * i + 5.0
    m = rng.random((64, 64)) < 0.3
    v = np.where(m[..., None], plane[..., None], 0.0).repeat(3, axis=2)
    out = fill_sparse(_img(v, m))
    assert np.abs(out[..., 0] - plane).max() < 0.1 * np.ptp(plane)


def test_dump_env(tmp_path, sphere_maps):
    dense, sparse = extract_all(*sphere_maps, EnvironmentBox(), ring_lights(), 2, 0,
                                return_sparse=True)
    dump_env(tmp_path, sparse, dense)
    np.testing.assert_array_equal(read_pgm(tmp_path / "env_r2_light4_mask.pgm"), sparse[4].mask)
    np.testing.assert_allclose(read_pfm(tmp_path / "env_r2_light4_dense.pfm"), dense[4], rtol=1e-7)
