import math

import numpy as np
import pytest

from gazekit.errors import (
    AllZero,
    BadValue,
    NotNormalized,
    OutOfBounds,
    ShapeMismatch,
)
from gazekit.grids import (
    Dataset,
    DensityGrid,
    Fixation,
    FixationSet,
    SaliencyMap,
    log_mixture,
    logsumexp2d,
    normalize,
)


class TestNormalize:
    def test_uniform(self):
        grid = normalize([[1.0, 1.0], [1.0, 1.0]])
        assert np.allclose(grid.log_p, math.log(0.25), rtol=0, atol=0)

    def test_point_mass(self):
        grid = normalize([[2.0, 0.0]])
        assert grid.log_p[0, 0] == 0.0
        assert grid.log_p[0, 1] == -np.inf

    def test_already_normalized_keeps_hand_logs(self):
        # the float sum of these values is 1 + 2e-16, so allow roundoff
        grid = normalize([[0.4, 0.3, 0.2, 0.1]])
        expected = np.log([[0.4, 0.3, 0.2, 0.1]])
        assert np.allclose(grid.log_p, expected, rtol=0, atol=1e-15)

    def test_all_zero(self):
        with pytest.raises(AllZero):
            normalize([[0.0, 0.0]])

    @pytest.mark.parametrize("bad", [-1.0, np.nan, np.inf])
    def test_bad_values(self, bad):
        with pytest.raises(BadValue):
            normalize([[1.0, bad]])

    def test_sums_to_one_for_random_grids(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            values = rng.uniform(0, 10, size=(5, 7))
            grid = normalize(values)
            assert abs(logsumexp2d(grid.log_p)) <= 1e-9


class TestDensityGrid:
    def test_rejects_unnormalized(self):
        with pytest.raises(NotNormalized):
            DensityGrid(np.log([[0.5, 0.4]]))

    def test_rejects_nan_and_plus_inf(self):
        with pytest.raises(BadValue):
            DensityGrid(np.array([[0.0, np.nan]]))
        with pytest.raises(BadValue):
            DensityGrid(np.array([[0.0, np.inf]]))

    def test_rejects_no_mass(self):
        with pytest.raises(BadValue):
            DensityGrid(np.full((2, 2), -np.inf), tol=None)

    def test_immutable(self):
        grid = normalize([[1.0, 1.0]])
        with pytest.raises(ValueError):
            grid.log_p[0, 0] = 0.0


class TestLogHelpers:
    def test_logsumexp_matches_direct_computation(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            values = rng.uniform(-30, 30, size=(3, 4))
            direct = math.log(np.exp(values).sum())
            assert math.isclose(logsumexp2d(values), direct, rel_tol=1e-12)

    def test_logsumexp_handles_all_neg_inf(self):
        assert logsumexp2d(np.full((2, 2), -np.inf)) == -np.inf

    def test_log_mixture_matches_linear_average(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            a = normalize(rng.uniform(0.1, 1, (4, 4))).log_p
            b = normalize(rng.uniform(0.1, 1, (4, 4))).log_p
            w = rng.uniform(0.05, 0.95)
            mixed = log_mixture([a, b], [w, 1 - w])
            direct = np.log(w * np.exp(a) + (1 - w) * np.exp(b))
            assert np.allclose(mixed, direct, atol=1e-12)

    def test_log_mixture_unit_weight_is_bitwise_identity(self):
        a = normalize([[0.4, 0.3, 0.2, 0.1]]).log_p
        b = normalize([[0.25] * 4]).log_p
        assert log_mixture([a, b], [1.0, 0.0]) is a


class TestFixations:
    def test_pixel_is_floor(self):
        assert Fixation("img1", "s1", 3.2, 0.9).pixel == (0, 3)

    def test_grouping(self):
        fx = FixationSet(
            [
                Fixation("b", "s1", 0.5, 0.5),
                Fixation("a", "s1", 1.5, 0.5),
                Fixation("b", "s2", 2.5, 1.5),
            ]
        )
        assert fx.image_ids() == ["a", "b"]
        assert fx.pixels_for("b").tolist() == [[0, 0], [1, 2]]
        assert fx.pixels_for("missing").shape == (0, 2)


class TestDataset:
    def test_rejects_out_of_bounds_fixation(self):
        fx = FixationSet([Fixation("img1", "s1", 8.0, 0.0)])
        with pytest.raises(OutOfBounds):
            Dataset({"img1": (2, 8)}, fx)

    def test_accepts_boundary_inside(self):
        fx = FixationSet([Fixation("img1", "s1", 7.999, 1.999)])
        ds = Dataset({"img1": (2, 8)}, fx)
        assert ds.fixations.pixels_for("img1").tolist() == [[1, 7]]

    def test_rejects_unregistered_image(self):
        fx = FixationSet([Fixation("ghost", "s1", 0.0, 0.0)])
        with pytest.raises(OutOfBounds):
            Dataset({"img1": (2, 8)}, fx)

    def test_rejects_density_shape_mismatch(self):
        grid = normalize(np.ones((3, 3)))
        with pytest.raises(ShapeMismatch):
            Dataset({"img1": (2, 8)}, densities={("m", "img1"): grid})

    def test_saliency_map_requires_finite(self):
        with pytest.raises(BadValue):
            SaliencyMap(np.array([[1.0, np.inf]]))
