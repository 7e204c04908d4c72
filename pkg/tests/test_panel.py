import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codeal.errors import (AlwaysTreatedUnit, MissingImputedCell, NoNeverTreatedUnit, NonBinaryIndicator,
                           NoTreatedCells, ReversedTreatment, ShapeMismatch, UnsortedPanel,
                           UntreatedTargetBlock)
from codeal.panel import (PanelDataset, adoption_times, aggregate_att, att_from_imputation,
                          build_four_block, extract_block_partition, validate_and_sort)

from conftest import FIG_GROUPS, FIG_SEGMENTS, staggered_pattern, staggered_patterns


def _panel(W, Y=None, P=0):
    W = np.asarray(W)
    Y = np.zeros(W.shape) if Y is None else Y
    return PanelDataset(Y, W, np.zeros((W.shape[0], P)))


def _brute_reconstruct(part, shape):
    """Cell-by-cell rebuild from the partition, independent of reconstruct()."""
    W = np.zeros(shape, dtype=np.int8)
    re, ce = list(part.row_edges), list(part.col_edges)
    for i in range(shape[0]):
        xi = max(k for k in range(1, len(re)) if re[k - 1] <= i)
        for t in range(shape[1]):
            eta = max(k for k in range(1, len(ce)) if ce[k - 1] <= t)
            W[i, t] = (xi, eta) in part.treated_blocks
    return W


class TestPanelDataset:
    def test_arrays_are_read_only(self):
        p = _panel([[0, 0], [0, 1]], P=2)
        with pytest.raises(ValueError):
            p.Y[0, 0] = 1.0
        assert p.W.dtype == np.int8
        assert p.unit_labels == ("0", "1") and p.period_labels == ("0", "1")

    def test_shape_checks(self):
        with pytest.raises(ShapeMismatch):
            PanelDataset(np.zeros((2, 3)), np.zeros((2, 2)), np.zeros((2, 0)))
        with pytest.raises(ShapeMismatch):
            PanelDataset(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((3, 1)))

    def test_non_binary(self):
        with pytest.raises(NonBinaryIndicator):
            _panel([[0, 0.5], [0, 0]])


class TestValidateAndSort:
    def test_descending_adoption_with_never_treated_first(self):
        T = 5
        W = np.zeros((4, T), dtype=int)
        W[1, 3:] = 1
        W[3, 2:] = 1
        _, perm = validate_and_sort(_panel(W))
        assert perm.tolist() == [0, 2, 1, 3]

    def test_all_zero_is_identity(self):
        _, perm = validate_and_sort(_panel(np.zeros((5, 4))))
        assert perm.tolist() == list(range(5))

    def test_shuffled_five_group_layout_sorts_into_groups(self, fig_pattern):
        rng = np.random.default_rng(0)
        shuffle = rng.permutation(fig_pattern.shape[0])
        sorted_panel, perm = validate_and_sort(_panel(fig_pattern[shuffle]))
        np.testing.assert_array_equal(sorted_panel.W, fig_pattern)
        part = extract_block_partition(sorted_panel.W)
        assert part.group_sizes == FIG_GROUPS
        # perm maps sorted rows back to the shuffled input
        np.testing.assert_array_equal(fig_pattern[shuffle][perm], fig_pattern)

    def test_reversed_treatment(self):
        W = np.zeros((3, 5), dtype=int)
        W[2, 1:3] = 1
        with pytest.raises(ReversedTreatment) as e:
            validate_and_sort(_panel(W))
        assert (e.value.unit, e.value.t) == (2, 3)

    def test_no_never_treated(self):
        W = np.zeros((2, 4), dtype=int)
        W[:, 2:] = 1
        with pytest.raises(NoNeverTreatedUnit):
            validate_and_sort(_panel(W))

    @given(staggered_patterns(max_n=20, max_t=20))
    @settings(max_examples=50, deadline=None)
    def test_sorted_order_is_non_increasing(self, W):
        rng = np.random.default_rng(W.sum())
        shuffled = W[rng.permutation(W.shape[0])]
        out, perm = validate_and_sort(_panel(shuffled))
        first = adoption_times(out.W)
        assert np.all(np.diff(first) <= 0)
        np.testing.assert_array_equal(shuffled[perm], out.W)


class TestBlockPartition:
    def test_five_group_layout(self, fig_pattern):
        part = extract_block_partition(fig_pattern)
        assert part.r == 5
        assert part.group_sizes == FIG_GROUPS and part.segment_lengths == FIG_SEGMENTS
        expected = {(xi, eta) for xi in range(1, 6) for eta in range(1, 6) if xi + eta > 6}
        assert part.treated_blocks == expected
        assert (3, 4) in part.treated_blocks

    def test_all_zero(self):
        part = extract_block_partition(np.zeros((4, 6)))
        assert part.r == 1 and part.treated_blocks == frozenset()
        assert part.subproblems() == []

    def test_unsorted(self, fig_pattern):
        with pytest.raises(UnsortedPanel):
            extract_block_partition(fig_pattern[::-1])

    def test_always_treated(self):
        W = np.zeros((3, 4), dtype=int)
        W[2] = 1
        with pytest.raises(AlwaysTreatedUnit):
            extract_block_partition(W)

    def test_random_20x30_matches_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            first = np.sort(rng.choice(np.arange(1, 31), 20))[::-1]
            first[:3] = 30
            W = (np.arange(30)[None, :] >= first[:, None]).astype(int)
            part = extract_block_partition(W)
            np.testing.assert_array_equal(_brute_reconstruct(part, W.shape), W)

    @given(staggered_patterns())
    @settings(max_examples=100, deadline=None)
    def test_reconstruction_round_trip(self, W):
        part = extract_block_partition(W)
        np.testing.assert_array_equal(part.reconstruct(), W)
        assert sum(part.group_sizes) == W.shape[0] and sum(part.segment_lengths) == W.shape[1]
        assert all(xi + eta > part.r + 1 for xi, eta in part.treated_blocks)

    @given(staggered_patterns())
    @settings(max_examples=100, deadline=None)
    def test_loop_targets_cover_treated_cells_once(self, W):
        part = extract_block_partition(W)
        hits = np.zeros(W.shape, dtype=int)
        for xi0, eta0 in part.subproblems():
            view = build_four_block(_panel(W), part, xi0, eta0)
            hits[view.target_rows.start:view.target_rows.stop,
                 view.target_cols.start:view.target_cols.stop] += 1
        np.testing.assert_array_equal(hits, W)


class TestFourBlock:
    def test_target_3_4(self, fig_pattern):
        part = extract_block_partition(fig_pattern)
        v = build_four_block(_panel(fig_pattern), part, 3, 4)
        assert (v.k1, v.k2) == (2, 3)
        reg = v.regions()
        assert reg["A"] == ((1, 2), (1, 3))
        assert reg["D"] == ((3, 3), (4, 4))
        assert v.n_control == 5 and v.n_pre == 12
        assert v.shape == (9, 14)

    def test_target_5_3(self, fig_pattern):
        part = extract_block_partition(fig_pattern)
        v = build_four_block(_panel(fig_pattern), part, 5, 3)
        assert (v.k1, v.k2) == (3, 1)
        assert v.regions()["D"] == ((4, 5), (2, 3))
        assert v.n_control == 9 and v.n_pre == 4

    def test_four_block_design_is_its_own_view(self):
        W = np.zeros((6, 8), dtype=int)
        W[4:, 5:] = 1
        Y = np.arange(48.0).reshape(6, 8)
        part = extract_block_partition(W)
        v = build_four_block(_panel(W, Y), part, 2, 2)
        assert (v.k1, v.k2) == (1, 1)
        np.testing.assert_array_equal(v.Y, Y)
        np.testing.assert_array_equal(v.W, W)

    def test_untreated_target(self, fig_pattern):
        part = extract_block_partition(fig_pattern)
        with pytest.raises(UntreatedTargetBlock):
            build_four_block(_panel(fig_pattern), part, 2, 4)

    @given(staggered_patterns())
    @settings(max_examples=60, deadline=None)
    def test_view_layout_and_origin_maps(self, W):
        Y = np.random.default_rng(1).standard_normal(W.shape)
        panel = _panel(W, Y)
        part = extract_block_partition(W)
        for xi0, eta0 in part.subproblems():
            v = build_four_block(panel, part, xi0, eta0)
            n1, t1 = v.n_control, v.n_pre
            assert not v.W[:n1].any() and not v.W[:, :t1].any()
            assert v.W[n1:, t1:].all()
            # A, B, C are observed untreated in the parent panel
            parent = v.take(W)
            assert not parent[:n1].any() and not parent[:, :t1].any()
            np.testing.assert_array_equal(v.Y, Y[np.ix_(v.rows, v.cols)])
            rs, cs = v.target_in_d()
            assert parent[n1:, t1:][rs, cs].all()


class TestAtt:
    def test_two_periods(self):
        W = np.array([[0, 0, 0], [0, 1, 1]])
        Y = np.array([[1.0, 1, 1], [5, 10, 12]])
        Y0 = np.array([[1.0, 1, 1], [5, 8, 9]])
        est = att_from_imputation(_panel(W, Y), Y0)
        assert est.per_unit[1] == pytest.approx(2.5)
        assert np.isnan(est.per_unit[0])
        assert est.as_dict() == {"1": 2.5}

    def test_zero_difference(self):
        W = np.array([[0, 0], [0, 1], [1, 1]])
        W[2, 0] = 0
        Y = np.random.default_rng(0).standard_normal((3, 2))
        est = att_from_imputation(_panel(W, Y), Y)
        np.testing.assert_array_equal(est.per_unit[est.treated_units], 0.0)

    def test_noiseless_oracle_recovers_tau(self):
        from codeal.simulation import DgpConfig, generate
        sim = generate(DgpConfig(N=20, T=30, N1=10, T1=15, noise_sd=0.0, seed=4))
        est = att_from_imputation(sim.panel, sim.untreated)
        treated = est.treated_units
        np.testing.assert_allclose(est.per_unit[treated], sim.tau[treated], atol=1e-12)

    def test_missing_cell(self):
        W = np.array([[0, 0], [0, 1]])
        with pytest.raises(MissingImputedCell) as e:
            att_from_imputation(_panel(W), np.array([[0.0, 0], [0, np.nan]]))
        assert (e.value.i, e.value.t) == (1, 1)

    def test_aggregate(self):
        W = np.array([[0, 0, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]])
        Y = np.zeros((3, 4))
        Y[1, 2:] = 2.5
        Y[2, 2:] = 3.5
        est = att_from_imputation(_panel(W, Y), np.zeros((3, 4)))
        assert aggregate_att(est) == pytest.approx(3.0)

    def test_aggregate_single_unit(self):
        W = np.array([[0, 0, 0], [0, 1, 1]])
        Y = np.array([[0.0, 0, 0], [0, 1, 4]])
        est = att_from_imputation(_panel(W, Y), np.zeros((2, 3)))
        assert aggregate_att(est) == pytest.approx(est.per_unit[1])

    def test_aggregate_unequal_counts_matches_cell_enumeration(self):
        rng = np.random.default_rng(3)
        W = np.array([[0, 0, 0, 0], [0, 0, 0, 1], [0, 1, 1, 1]])
        Y, Y0 = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        est = att_from_imputation(_panel(W, Y), Y0)
        cells = [Y[i, t] - Y0[i, t] for i in range(3) for t in range(4) if W[i, t]]
        assert aggregate_att(est) == pytest.approx(sum(cells) / len(cells), abs=1e-12)

    def test_aggregate_needs_treated_cells(self):
        est = att_from_imputation(_panel(np.zeros((2, 2))), np.zeros((2, 2)))
        with pytest.raises(NoTreatedCells):
            aggregate_att(est)

    @given(st.floats(-1e3, 1e3), st.integers(0, 10 ** 6))
    @settings(max_examples=50, deadline=None)
    def test_shift_invariance(self, c, seed):
        rng = np.random.default_rng(seed)
        W = staggered_pattern((2, 3, 2), (3, 2, 4))
        Y, Y0 = rng.standard_normal(W.shape), rng.standard_normal(W.shape)
        base = att_from_imputation(_panel(W, Y), Y0)
        shifted = att_from_imputation(_panel(W, Y + c * W), Y0 + c * W)
        t = base.treated_units
        np.testing.assert_allclose(shifted.per_unit[t], base.per_unit[t], atol=1e-9)
