import numpy as np
import pytest

from conftest import make_mask, random_mask, random_nonempty_mask
from oracles import brute_boundary_metrics, brute_edt, brute_surface
from volkit.segmetrics import (
    ConfusionCounts,
    UndefinedMetricError,
    boundary_metrics,
    cohen_kappa,
    confusion,
    edt,
    evaluate_case,
    extract_surface,
    region_metrics,
)


def fixture_3x3x1():
    """pred 6 fg, gt 4 fg, overlap 3 -> tp=3, fp=3, fn=1."""
    pred = np.zeros((3, 3, 1))
    gt = np.zeros((3, 3, 1))
    pred[0, :, 0] = 1
    pred[1, :, 0] = 1  # 6 voxels
    gt[1, :, 0] = 1
    gt[2, 0, 0] = 1  # 4 voxels, 3 shared
    return make_mask(pred), make_mask(gt)


class TestConfusion:
    def test_identical(self):
        rng = np.random.default_rng(0)
        m = random_mask(rng, (3, 3, 3), p=10 / 27)
        c = confusion(m, m)
        assert c.fp == c.fn == 0
        assert c.tp == m.foreground_count()
        assert c.total == 27

    def test_both_empty(self):
        m = make_mask(np.zeros((2, 2, 2)))
        c = confusion(m, m)
        assert (c.tp, c.fp, c.fn, c.tn) == (0, 0, 0, 8)

    def test_hand_fixture(self):
        pred, gt = fixture_3x3x1()
        c = confusion(pred, gt)
        assert (c.tp, c.fp, c.fn, c.tn) == (3, 3, 1, 2)

    def test_mismatch_errors(self):
        a = make_mask(np.zeros((2, 2, 2)))
        b = make_mask(np.zeros((2, 2, 3)))
        with pytest.raises(ValueError, match="shape"):
            confusion(a, b)
        c = make_mask(np.zeros((2, 2, 2)), spacing=(1, 1, 2))
        with pytest.raises(ValueError, match="spacing"):
            confusion(a, c)


class TestRegionMetrics:
    def test_identical_nonempty(self):
        rm = region_metrics(ConfusionCounts(tp=5, fp=0, fn=0, tn=3))
        assert (rm.dice, rm.jaccard, rm.precision, rm.recall) == (1, 1, 1, 1)

    def test_hand_fixture_values(self):
        rm = region_metrics(ConfusionCounts(tp=3, fp=3, fn=1, tn=2))
        assert rm.dice == pytest.approx(0.6)
        assert rm.jaccard == pytest.approx(3 / 7)
        assert rm.precision == pytest.approx(0.5)
        assert rm.recall == pytest.approx(0.75)

    def test_disjoint_nonempty(self):
        rm = region_metrics(ConfusionCounts(tp=0, fp=4, fn=5, tn=0))
        assert rm.dice == 0 and rm.jaccard == 0
        assert rm.precision == 0 and rm.recall == 0

    def test_empty_conventions(self):
        both_empty = region_metrics(ConfusionCounts(tp=0, fp=0, fn=0, tn=8))
        assert both_empty.dice == 1 and both_empty.jaccard == 1
        assert both_empty.precision is None and both_empty.recall is None
        pred_empty = region_metrics(ConfusionCounts(tp=0, fp=0, fn=3, tn=5))
        assert pred_empty.dice == 0
        assert pred_empty.precision is None and pred_empty.recall == 0

    def test_jaccard_dice_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            tp, fp, fn = rng.integers(0, 50, size=3)
            if tp + fp + fn == 0:
                continue
            rm = region_metrics(ConfusionCounts(tp=int(tp), fp=int(fp), fn=int(fn), tn=1))
            assert abs(rm.jaccard - rm.dice / (2 - rm.dice)) <= 1e-12


class TestSurface:
    def test_single_voxel(self):
        data = np.zeros((3, 3, 3))
        data[1, 1, 1] = 1
        surf = extract_surface(make_mask(data))
        np.testing.assert_array_equal(surf, [[1, 1, 1]])

    def test_solid_cube_shell(self):
        data = np.zeros((5, 5, 5))
        data[1:4, 1:4, 1:4] = 1
        surf = extract_surface(make_mask(data))
        assert len(surf) == 26  # all but the center voxel

    def test_full_grid_border(self):
        surf = extract_surface(make_mask(np.ones((3, 3, 3))))
        assert len(surf) == 26

    def test_empty_errors(self):
        with pytest.raises(UndefinedMetricError):
            extract_surface(make_mask(np.zeros((2, 2, 2))))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            m = random_nonempty_mask(rng, tuple(rng.integers(1, 7, size=3)))
            got = {tuple(c) for c in extract_surface(m)}
            want = {tuple(c) for c in brute_surface(m.data)}
            assert got == want


class TestEdt:
    def test_zero_on_surface(self):
        data = np.zeros((4, 4, 4))
        data[1:3, 1:3, 1:3] = 1
        m = make_mask(data)
        field = edt(m)
        for x, y, z in extract_surface(m):
            assert field[x, y, z] == 0.0

    def test_anisotropic_hand_value(self):
        data = np.zeros((1, 1, 5))
        data[0, 0, 0] = 1
        field = edt(make_mask(data, spacing=(1, 1, 2)))
        assert field[0, 0, 4] == pytest.approx(8.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(15):
            dims = tuple(rng.integers(2, 17, size=3))
            spacing = tuple(float(s) for s in rng.uniform(0.5, 3.0, size=3))
            m = random_nonempty_mask(rng, dims, spacing)
            np.testing.assert_allclose(edt(m), brute_edt(m.data, spacing), atol=1e-9)


class TestBoundaryMetrics:
    def test_identical_masks(self):
        rng = np.random.default_rng(4)
        m = random_nonempty_mask(rng, (5, 5, 5))
        hd95, assd = boundary_metrics(m, m)
        assert hd95 == 0.0 and assd == 0.0

    def test_offset_single_voxels(self):
        a = np.zeros((1, 1, 6))
        b = np.zeros((1, 1, 6))
        a[0, 0, 0] = 1
        b[0, 0, 4] = 1
        hd95, assd = boundary_metrics(
            make_mask(a, spacing=(1, 1, 2)), make_mask(b, spacing=(1, 1, 2))
        )
        assert hd95 == pytest.approx(8.0)
        assert assd == pytest.approx(8.0)

    def test_empty_mask_is_undefined(self):
        full = make_mask(np.ones((2, 2, 2)))
        empty = make_mask(np.zeros((2, 2, 2)))
        with pytest.raises(UndefinedMetricError):
            boundary_metrics(full, empty)
        with pytest.raises(UndefinedMetricError):
            boundary_metrics(empty, full)

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(15):
            dims = tuple(rng.integers(2, 17, size=3))
            spacing = tuple(float(s) for s in rng.uniform(0.5, 3.0, size=3))
            pred = random_nonempty_mask(rng, dims, spacing)
            gt = random_nonempty_mask(rng, dims, spacing)
            got = boundary_metrics(pred, gt)
            want = brute_boundary_metrics(pred.data, gt.data, spacing)
            np.testing.assert_allclose(got, want, atol=1e-9)


class TestCohenKappa:
    def test_identical_with_both_classes(self):
        rng = np.random.default_rng(6)
        m = random_nonempty_mask(rng, (4, 4, 4))
        assert cohen_kappa(m, m) == pytest.approx(1.0)

    def test_hand_fixture(self):
        # 10 voxels: 4 agree-fg, 4 agree-bg, 1 fg-only-a, 1 fg-only-b
        a = np.array([1, 1, 1, 1, 1, 0, 0, 0, 0, 0]).reshape(10, 1, 1)
        b = np.array([1, 1, 1, 1, 0, 1, 0, 0, 0, 0]).reshape(10, 1, 1)
        assert cohen_kappa(make_mask(a), make_mask(b)) == pytest.approx(0.6)

    def test_complement_balanced(self):
        data = np.zeros((10, 10, 10))
        data[:5] = 1  # exactly half foreground
        m = make_mask(data)
        comp = make_mask(1 - m.data)
        assert cohen_kappa(m, comp) == pytest.approx(-1.0)

    def test_degenerate_undefined(self):
        empty = make_mask(np.zeros((2, 2, 2)))
        with pytest.raises(UndefinedMetricError):
            cohen_kappa(empty, empty)

    def test_kappa_bounded_by_observed_agreement(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            a = random_mask(rng, (5, 5, 5))
            b = random_mask(rng, (5, 5, 5))
            try:
                k = cohen_kappa(a, b)
            except UndefinedMetricError:
                continue
            p_o = np.count_nonzero(a.data == b.data) / a.data.size
            assert k <= p_o + 1e-12
            assert -1 - 1e-12 <= k <= 1 + 1e-12


class TestEvaluateCase:
    def test_perfect_case(self):
        rng = np.random.default_rng(8)
        m = random_nonempty_mask(rng, (5, 5, 5))
        cm = evaluate_case(m, m)
        assert cm.dice == 1 and cm.hd95_mm == 0 and cm.vpe == 0

    def test_composed_fixture(self):
        pred, gt = fixture_3x3x1()
        cm = evaluate_case(pred, gt)
        assert cm.dice == pytest.approx(0.6)
        assert cm.pred_volume_ml == pytest.approx(0.006)
        assert cm.gt_volume_ml == pytest.approx(0.004)
        assert cm.vpe == pytest.approx(0.5)

    def test_disjoint_masks_hd95_from_oracle(self):
        a = np.zeros((6, 1, 1))
        b = np.zeros((6, 1, 1))
        a[0] = 1
        b[5] = 1
        pred, gt = make_mask(a), make_mask(b)
        cm = evaluate_case(pred, gt)
        assert cm.dice == 0
        want_hd95, want_assd = brute_boundary_metrics(pred.data, gt.data, (1, 1, 1))
        assert cm.hd95_mm == pytest.approx(want_hd95)
        assert cm.assd_mm == pytest.approx(want_assd)

    def test_empty_handling(self):
        empty = make_mask(np.zeros((3, 3, 3)))
        full = make_mask(np.ones((3, 3, 3)))
        cm = evaluate_case(empty, full)
        assert cm.dice == 0 and cm.hd95_mm is None and cm.assd_mm is None
        assert cm.vpe == pytest.approx(-1.0)
        cm2 = evaluate_case(full, empty)
        assert cm2.vpe is None


class TestMetricProperties:
    def test_symmetry(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            a = random_nonempty_mask(rng, (5, 5, 5))
            b = random_nonempty_mask(rng, (5, 5, 5))
            ca, cb = evaluate_case(a, b), evaluate_case(b, a)
            assert ca.dice == pytest.approx(cb.dice)
            assert ca.jaccard == pytest.approx(cb.jaccard)
            assert ca.hd95_mm == pytest.approx(cb.hd95_mm)
            assert ca.assd_mm == pytest.approx(cb.assd_mm)
            assert ca.precision == pytest.approx(cb.recall)
            assert cohen_kappa(a, b) == pytest.approx(cohen_kappa(b, a))

    def test_spacing_scaling(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            data_a = (rng.random((5, 5, 5)) < 0.5).astype(np.uint8)
            data_b = (rng.random((5, 5, 5)) < 0.5).astype(np.uint8)
            if not data_a.any() or not data_b.any():
                continue
            s = 2.5
            base = evaluate_case(make_mask(data_a), make_mask(data_b))
            scaled = evaluate_case(
                make_mask(data_a, spacing=(s, s, s)), make_mask(data_b, spacing=(s, s, s))
            )
            assert scaled.dice == base.dice and scaled.jaccard == base.jaccard
            assert scaled.hd95_mm == pytest.approx(s * base.hd95_mm)
            assert scaled.assd_mm == pytest.approx(s * base.assd_mm)
            assert scaled.gt_volume_ml == pytest.approx(s**3 * base.gt_volume_ml)
            assert cohen_kappa(make_mask(data_a), make_mask(data_b)) == pytest.approx(
                cohen_kappa(make_mask(data_a, spacing=(s, s, s)), make_mask(data_b, spacing=(s, s, s)))
            )

    def test_translation_invariance(self):
        rng = np.random.default_rng(11)
        inner_a = (rng.random((3, 3, 3)) < 0.6).astype(np.uint8)
        inner_b = (rng.random((3, 3, 3)) < 0.6).astype(np.uint8)
        inner_a[0, 0, 0] = inner_b[1, 1, 1] = 1

        def place(inner, offset):
            data = np.zeros((8, 8, 8), dtype=np.uint8)
            ox, oy, oz = offset
            data[ox : ox + 3, oy : oy + 3, oz : oz + 3] = inner
            return make_mask(data)

        base = evaluate_case(place(inner_a, (0, 0, 0)), place(inner_b, (0, 0, 0)))
        moved = evaluate_case(place(inner_a, (3, 2, 4)), place(inner_b, (3, 2, 4)))
        assert moved.dice == base.dice
        assert moved.hd95_mm == pytest.approx(base.hd95_mm)
        assert moved.assd_mm == pytest.approx(base.assd_mm)
        assert moved.pred_volume_ml == base.pred_volume_ml
