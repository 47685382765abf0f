import math

import numpy as np
import pytest

from gazekit import ensemble
from gazekit.ensemble import (
    MixtureSpec,
    build_dsre,
    disagreement_ranking,
    js_divergence,
    mix,
    weight_sweep,
)
from gazekit.errors import BadValue, BadWeights, MissingInstance, ShapeMismatch
from gazekit.grids import Dataset, Fixation, FixationSet, normalize
from gazekit.metrics import information_gain


def fixations_at(image_id, pixels):
    return [Fixation(image_id, "s0", c + 0.5, r + 0.5) for r, c in pixels]


class TestMixtureSpec:
    def test_valid(self):
        spec = MixtureSpec((("a", 0.5), ("b", 0.5)))
        assert spec.names() == ["a", "b"]

    def test_rejects_unnormalized(self):
        with pytest.raises(BadWeights):
            MixtureSpec((("a", 0.5), ("b", 0.6)))

    def test_rejects_negative(self):
        with pytest.raises(BadWeights):
            MixtureSpec((("a", 1.5), ("b", -0.5)))


class TestMix:
    def test_zero_weight_member_is_dropped_bitwise(self):
        a = normalize([[0.4, 0.3, 0.2, 0.1]])
        b = normalize([[0.25] * 4])
        mixed = mix([a, b], [1.0, 0.0])
        assert mixed.log_p is a.log_p

    def test_idempotent_on_identical_members(self):
        a = normalize([[0.7, 0.3]])
        mixed = mix([a, a], [0.5, 0.5])
        assert np.allclose(mixed.log_p, a.log_p, atol=1e-12)

    def test_point_mass_average(self):
        a = normalize([[1.0, 0.0]])
        b = normalize([[0.0, 1.0]])
        mixed = mix([a, b], [0.5, 0.5])
        assert np.allclose(mixed.prob(), [[0.5, 0.5]], atol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            mix([normalize([[1.0, 1.0]]), normalize([[1.0], [1.0]])], [0.5, 0.5])

    def test_associative_at_weight_level(self):
        rng = np.random.default_rng(0)
        a, b, c = (normalize(rng.uniform(0.1, 1, (3, 3))) for _ in range(3))
        nested = mix([mix([a, b], [0.5, 0.5]), c], [0.8, 0.2])
        flat = mix([a, b, c], [0.4, 0.4, 0.2])
        assert np.allclose(nested.log_p, flat.log_p, atol=1e-12)

    def test_mixture_ll_at_least_min_member_pointwise(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a = normalize(rng.uniform(0.01, 1, (4, 4)))
            b = normalize(rng.uniform(0.01, 1, (4, 4)))
            mixed = mix([a, b], [0.5, 0.5])
            floor = np.minimum(a.log_p, b.log_p)
            assert np.all(mixed.log_p >= floor - 1e-12)


class TestWeightSweep:
    def test_constant_for_identical_models(self):
        dens = {"img": normalize([[0.6, 0.4]])}
        base = {"img": normalize([[0.5, 0.5]])}
        fx = FixationSet(fixations_at("img", [(0, 0), (0, 1)]))
        curve = weight_sweep(dens, dens, base, fx, 5)
        values = {ig for _, ig in curve}
        assert len(values) == 1

    def test_endpoints_match_members_exactly(self):
        a = {"img": normalize([[0.7, 0.2, 0.1]])}
        b = {"img": normalize([[0.2, 0.3, 0.5]])}
        base = {"img": normalize([[1 / 3] * 3])}
        fx = FixationSet(fixations_at("img", [(0, 0), (0, 2)]))
        curve = weight_sweep(a, b, base, fx, 5)
        ig_a = information_gain(a, base, fx).aggregate
        ig_b = information_gain(b, base, fx).aggregate
        assert curve[0] == (0.0, ig_a)
        assert curve[-1] == (1.0, ig_b)

    def test_complementary_point_masses_peak_at_half(self):
        # both pixels fixated equally often; each model nails one of them
        # (masses softened so the losing pixel keeps nonzero density)
        delta = 1e-3
        a = {"img": normalize([[1.0 - delta, delta]])}
        b = {"img": normalize([[delta, 1.0 - delta]])}
        base = {"img": normalize([[0.5, 0.5]])}
        fx = FixationSet(fixations_at("img", [(0, 0), (0, 1)]))
        curve = weight_sweep(a, b, base, fx, 21)
        best_w, best_ig = max(curve, key=lambda p: p[1])
        assert best_w == 0.5
        # closed form: the mixture puts (1-w)(1-d)+wd on pixel 0, the
        # complement on pixel 1, and each holds half the fixations
        for w, ig in curve:
            p0 = (1 - w) * (1 - delta) + w * delta
            expected = 0.5 * math.log2(p0 / 0.5) + 0.5 * math.log2((1 - p0) / 0.5)
            assert math.isclose(ig, expected, rel_tol=0, abs_tol=1e-12)

    def test_too_few_steps(self):
        dens = {"img": normalize([[0.6, 0.4]])}
        fx = FixationSet(fixations_at("img", [(0, 0)]))
        with pytest.raises(BadValue):
            weight_sweep(dens, dens, dens, fx, 2)


def _instances(named):
    images = {}
    densities = {}
    for name, grids in named.items():
        for img, grid in grids.items():
            densities[(name, img)] = grid
            images[img] = grid.shape
    return Dataset(images, None, densities)


class TestDsre:
    def test_single_instance_identity(self):
        grid = normalize([[0.7, 0.3]])
        names = ["m1", "m2", "m3", "m4"]
        ds = _instances({f"{n}#0": {"img": grid} for n in names})
        mixed = build_dsre(ds, names, 1)
        assert np.allclose(mixed["img"].log_p, grid.log_p, atol=1e-12)

    def test_four_way_equal_weights(self):
        rng = np.random.default_rng(2)
        grids = {f"m{k}": normalize(rng.uniform(0.1, 1, (2, 2))) for k in range(4)}
        ds = _instances({f"{n}#0": {"img": g} for n, g in grids.items()})
        mixed = build_dsre(ds, sorted(grids), 1)
        direct = mix(list(grids[n] for n in sorted(grids)), [0.25] * 4)
        assert np.allclose(mixed["img"].log_p, direct.log_p, atol=1e-12)

    def test_missing_instance(self):
        grid = normalize([[0.7, 0.3]])
        ds = _instances({"m1#0": {"img": grid}})
        with pytest.raises(MissingInstance):
            build_dsre(ds, ["m1"], 2)

    def test_complementary_mixture_beats_members(self):
        # each model is sharply right on half the images, flat elsewhere
        sharp = normalize([[0.85, 0.05], [0.05, 0.05]])
        flat = normalize(np.full((2, 2), 0.25))
        a = {"i0": sharp, "i1": flat}
        b = {"i0": flat, "i1": sharp}
        base = {"i0": flat, "i1": flat}
        fx = FixationSet(fixations_at("i0", [(0, 0)]) + fixations_at("i1", [(0, 0)]))
        mixed = {img: mix([a[img], b[img]], [0.5, 0.5]) for img in a}
        ig_mix = information_gain(mixed, base, fx).aggregate
        ig_a = information_gain(a, base, fx).aggregate
        ig_b = information_gain(b, base, fx).aggregate
        # closed form: a member is right on one image (log2(.85/.25)) and
        # flat on the other (0); the mixture gets log2(.55/.25) everywhere
        assert math.isclose(ig_a, math.log2(0.85 / 0.25) / 2, abs_tol=1e-12)
        assert math.isclose(ig_mix, math.log2(0.55 / 0.25), abs_tol=1e-12)
        assert ig_mix > max(ig_a, ig_b)


class TestDisagreement:
    def test_identical_models_zero_bits(self):
        grid = normalize([[0.6, 0.4]])
        assert js_divergence([grid, grid]) == 0.0

    def test_disjoint_point_masses_one_bit(self):
        a = normalize([[1.0, 0.0]])
        b = normalize([[0.0, 1.0]])
        assert js_divergence([a, b]) == 1.0

    def test_bounded_by_log2_m(self):
        rng = np.random.default_rng(3)
        for m in (2, 3, 4):
            grids = [normalize(rng.uniform(0.01, 1, (3, 3))) for _ in range(m)]
            js = js_divergence(grids)
            assert 0.0 <= js <= math.log2(m) + 1e-12

    def test_symmetric_under_permutation(self):
        rng = np.random.default_rng(4)
        grids = [normalize(rng.uniform(0.01, 1, (3, 3))) for _ in range(3)]
        assert math.isclose(
            js_divergence(grids), js_divergence(grids[::-1]), abs_tol=1e-12
        )

    def test_ranking_order_and_tiebreak(self):
        a = normalize([[1.0, 0.0]])
        b = normalize([[0.0, 1.0]])
        same = normalize([[0.5, 0.5]])
        by_model = {
            "m1": {"disjoint": a, "alike": same, "alike2": same},
            "m2": {"disjoint": b, "alike": same, "alike2": same},
        }
        ranking = disagreement_ranking(by_model)
        assert ranking[0] == ("disjoint", 1.0)
        assert [img for img, _ in ranking[1:]] == ["alike", "alike2"]
