import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_gxe import data_model as dm


class TestBuildDesign:
    def test_single_entry_example(self):
        u = dm.build_design(np.array([[2.0]]), np.array([[3.0, -1.0]]))
        assert np.array_equal(u, np.array([[2.0, 6.0, -2.0]]))

    def test_group_major_order(self):
        x = np.array([[1.0, 10.0], [2.0, 20.0]])
        e = np.array([[0.5], [4.0]])
        u = dm.build_design(x, e)
        expected = np.array([[1.0, 0.5, 10.0, 5.0],
                             [2.0, 8.0, 20.0, 80.0]])
        assert np.array_equal(u, expected)

    def test_no_environment(self):
        x = np.array([[1.0, 2.0]])
        u = dm.build_design(x, np.zeros((1, 0)))
        assert np.array_equal(u, x)

    def test_row_mismatch(self):
        with pytest.raises(dm.DataError, match="rows"):
            dm.build_design(np.zeros((3, 2)), np.zeros((2, 1)))

    def test_default_scale_dimensions(self):
        # q=3 covariates, k=5 environments, p=100 genes: 600 interaction
        # columns, 608 regression effects overall
        ds = dm.GxEDataset.from_components(
            np.zeros(5), np.zeros((5, 3)), np.zeros((5, 5)), np.zeros((5, 100)))
        assert ds.u.shape == (5, 600)
        assert ds.q + ds.k + ds.u.shape[1] == 608
        assert ds.n_effects_per_group == 6

    @settings(deadline=None, max_examples=60)
    @given(n=st.integers(1, 6), p=st.integers(1, 4), k=st.integers(0, 3),
           seed=st.integers(0, 10_000))
    def test_columns_match_definition(self, n, p, k, seed):
        r = np.random.default_rng(seed)
        x = r.standard_normal((n, p))
        e = r.standard_normal((n, k))
        u = dm.build_design(x, e)
        ell = k + 1
        for j in range(p):
            assert np.array_equal(u[:, j * ell], x[:, j])
            for m in range(k):
                assert np.array_equal(u[:, j * ell + m + 1], x[:, j] * e[:, m])


class TestMethodConfig:
    def test_all_twelve_names(self):
        assert len(dm.METHOD_NAMES) == 12
        for name in dm.METHOD_NAMES:
            cfg = dm.MethodConfig.from_name(name)
            assert cfg.name == name

    def test_from_name_rejects_unknown(self):
        with pytest.raises(dm.DataError, match="unknown method"):
            dm.MethodConfig.from_name("rbsg-xx")

    def test_bad_structure(self):
        with pytest.raises(dm.DataError, match="structure"):
            dm.MethodConfig(robust=True, spike_slab=True, structure="blocky")

    def test_hyper_validation(self):
        with pytest.raises(dm.DataError, match="nu_shape"):
            dm.Hyperparameters(nu_shape=-1.0).validate()
        with pytest.raises(dm.DataError, match="burn_in"):
            dm.Hyperparameters(n_iter=10, burn_in=10).validate()
        dm.Hyperparameters().validate()


class TestStandardize:
    def test_columns_centered_and_scaled(self, rng):
        ds = dm.GxEDataset.from_components(
            rng.standard_normal(50) * 3 + 2,
            rng.standard_normal((50, 2)) * 5,
            rng.standard_normal((50, 3)) + 1,
            rng.standard_normal((50, 4)) * 0.1)
        out, rec = dm.standardize(ds)
        assert abs(out.y.mean()) < 1e-12
        for mat in (out.w, out.e, out.x):
            assert np.allclose(mat.mean(axis=0), 0.0, atol=1e-12)
            assert np.allclose(mat.std(axis=0, ddof=1), 1.0, atol=1e-12)
        # y is centered, never rescaled
        assert np.allclose(out.y, ds.y - ds.y.mean())
        assert not rec.any_zero_variance

    def test_round_trip(self, rng):
        ds = dm.GxEDataset.from_components(
            rng.standard_normal(30), rng.standard_normal((30, 1)),
            rng.standard_normal((30, 2)), rng.standard_normal((30, 3)))
        out, rec = dm.standardize(ds)
        back = dm.unstandardize(out, rec)
        for name in ("y", "w", "e", "x", "u"):
            assert np.allclose(getattr(back, name), getattr(ds, name), atol=1e-12)

    def test_apply_standardization_matches_on_training_data(self, rng):
        ds = dm.GxEDataset.from_components(
            rng.standard_normal(25), rng.standard_normal((25, 2)),
            rng.standard_normal((25, 1)), rng.standard_normal((25, 2)))
        out, rec = dm.standardize(ds)
        again = dm.apply_standardization(ds, rec)
        for name in ("y", "w", "e", "x"):
            assert np.allclose(getattr(again, name), getattr(out, name))

    def test_test_set_not_self_standardized(self, rng):
        train = dm.GxEDataset.from_components(
            rng.standard_normal(40), rng.standard_normal((40, 1)),
            rng.standard_normal((40, 1)), rng.standard_normal((40, 2)))
        shifted = dm.GxEDataset.from_components(
            train.y + 10, train.w + 10, train.e + 10, train.x + 10)
        _, rec = dm.standardize(train)
        out = dm.apply_standardization(shifted, rec)
        # a shifted copy lands off-center under the training transform
        assert abs(out.y.mean()) > 5
        assert np.all(np.abs(out.x.mean(axis=0)) > 1)

    def test_constant_column_flagged_not_rescaled(self, rng):
        x = rng.standard_normal((20, 2))
        x[:, 1] = 7.0
        ds = dm.GxEDataset.from_components(
            rng.standard_normal(20), np.zeros((20, 0)), np.zeros((20, 0)), x)
        out, rec = dm.standardize(ds)
        assert rec.any_zero_variance
        assert rec.x_zero_variance.tolist() == [False, True]
        assert np.allclose(out.x[:, 1], 0.0)
        assert rec.x_scale[1] == 1.0

    def test_needs_two_observations(self):
        ds = dm.GxEDataset.from_components(
            np.array([1.0]), np.zeros((1, 0)), np.zeros((1, 0)), np.array([[1.0]]))
        with pytest.raises(dm.DataError, match="at least 2"):
            dm.standardize(ds)

    @settings(deadline=None, max_examples=40)
    @given(seed=st.integers(0, 10_000))
    def test_commutes_with_row_permutation(self, seed):
        r = np.random.default_rng(seed)
        ds = dm.GxEDataset.from_components(
            r.standard_normal(12), r.standard_normal((12, 1)),
            r.standard_normal((12, 2)), r.standard_normal((12, 2)))
        perm = r.permutation(12)
        permuted = dm.GxEDataset.from_components(
            ds.y[perm], ds.w[perm], ds.e[perm], ds.x[perm])
        a, _ = dm.standardize(ds)
        b, _ = dm.standardize(permuted)
        assert np.allclose(b.y, a.y[perm], atol=1e-10)
        assert np.allclose(b.u, a.u[perm], atol=1e-10)


class TestCsvIo:
    def test_round_trip_exact(self, tmp_path, rng):
        ds = dm.GxEDataset.from_components(
            rng.standard_normal(15), rng.standard_normal((15, 2)),
            rng.standard_normal((15, 1)), rng.standard_normal((15, 3)))
        path = tmp_path / "data.csv"
        dm.write_csv(ds, path)
        back = dm.load_csv(path)
        for name in ("y", "w", "e", "x", "u"):
            assert np.array_equal(getattr(back, name), getattr(ds, name))

    def test_header_parsing(self):
        assert dm._parse_header(["y", "w1", "e1", "e2", "x1"]) == (1, 2, 1)
        assert dm._parse_header(["y", "x1", "x2"]) == (0, 0, 2)

    def test_header_errors(self):
        with pytest.raises(dm.DataError, match="start with column 'y'"):
            dm._parse_header(["w1", "y"])
        with pytest.raises(dm.DataError, match="out of order"):
            dm._parse_header(["y", "e1", "w1"])
        with pytest.raises(dm.DataError, match="expected x2"):
            dm._parse_header(["y", "x1", "x3"])
        with pytest.raises(dm.DataError, match="unrecognized"):
            dm._parse_header(["y", "gene1"])

    def test_bad_cell_reports_row_and_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("y,x1,x2\n1.0,2.0,3.0\n4.0,oops,6.0\n")
        with pytest.raises(dm.DataError, match=r"row 2, column 'x1'"):
            dm.load_csv(path)

    def test_non_finite_cell(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("y,x1\n1.0,inf\n")
        with pytest.raises(dm.DataError, match=r"row 1, column 'x1'.*non-finite"):
            dm.load_csv(path)

    def test_width_mismatch(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("y,x1,x2\n1.0,2.0\n")
        with pytest.raises(dm.DataError, match=r"row 1: expected 3 fields, found 2"):
            dm.load_csv(path)

    def test_empty_and_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(dm.DataError, match="no data rows"):
            dm.load_csv(path)
        path.write_text("y,x1\n")
        with pytest.raises(dm.DataError, match="no data rows"):
            dm.load_csv(path)

    def test_schema_mismatch(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,x1\n1.0,2.0\n")
        with pytest.raises(dm.DataError, match="expected p=3, file has 1"):
            dm.load_csv(path, schema={"p": 3})
        assert dm.load_csv(path, schema={"p": 1, "q": 0, "k": 0}).p == 1

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,x1\n1.0,2.0\n\n3.0,4.0\n")
        assert dm.load_csv(path).n == 2

    @settings(deadline=None, max_examples=30)
    @given(q=st.integers(0, 3), k=st.integers(0, 3), p=st.integers(1, 5))
    def test_header_round_trip(self, q, k, p):
        assert dm._parse_header(dm.dataset_header(q, k, p)) == (q, k, p)


class TestPrescreen:
    def test_null_calibration(self):
        r = np.random.default_rng(123)
        ds = dm.GxEDataset.from_components(
            r.standard_normal(200), np.zeros((200, 0)),
            r.standard_normal((200, 2)), r.standard_normal((200, 100)))
        kept = dm.prescreen_marginal(ds, 0.001)
        # expectation 0.1 false keeps over 100 null groups
        assert len(kept) <= 5

    def test_signal_group_survives(self):
        r = np.random.default_rng(5)
        x = r.standard_normal((120, 10))
        y = 3.0 * x[:, 4] + r.standard_normal(120)
        ds = dm.GxEDataset.from_components(y, np.zeros((120, 0)),
                                           np.zeros((120, 0)), x)
        kept = dm.prescreen_marginal(ds, 1e-4)
        assert 4 in kept
        assert kept == sorted(kept)

    def test_cutoff_one_keeps_everything(self):
        r = np.random.default_rng(2)
        ds = dm.GxEDataset.from_components(
            r.standard_normal(50), np.zeros((50, 0)),
            np.zeros((50, 0)), r.standard_normal((50, 8)))
        assert dm.prescreen_marginal(ds, 1.0) == list(range(8))

    def test_cutoff_domain(self, tiny_dataset):
        with pytest.raises(dm.DataError, match="p_cutoff"):
            dm.prescreen_marginal(tiny_dataset, 0.0)
        with pytest.raises(dm.DataError, match="p_cutoff"):
            dm.prescreen_marginal(tiny_dataset, 1.5)

    def test_needs_enough_rows(self):
        ds = dm.GxEDataset.from_components(
            np.arange(3.0), np.zeros((3, 0)),
            np.ones((3, 2)) * np.arange(3)[:, None], np.ones((3, 1)))
        with pytest.raises(dm.DataError, match="n > L\\+1"):
            dm.prescreen_marginal(ds, 0.05)


class TestTrueModel:
    def test_consistency_check(self):
        beta = np.zeros((3, 2))
        beta[1, 0] = 0.5
        good = dm.TrueModel(alpha_true=np.zeros(0), theta_true=np.zeros(1),
                            beta_true=beta, active_groups=(1,),
                            active_effects=((1, 0),))
        good.check()
        bad = dm.TrueModel(alpha_true=np.zeros(0), theta_true=np.zeros(1),
                           beta_true=beta, active_groups=(1,),
                           active_effects=((1, 1),))
        with pytest.raises(dm.DataError, match="active_effects"):
            bad.check()
