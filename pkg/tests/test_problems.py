import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clipsim.core import l2
from clipsim.diagnostics import central_difference_gradient
from clipsim.errors import (
    ConfigurationError,
    DatasetParseError,
    InvalidParameterError,
    UnsupportedDatasetError,
)
from clipsim.problems import (
    SparseDataset,
    chen_example,
    load_libsvm,
    nonconvex_logreg,
    normalize_rows,
    partition,
    scaled_quadratic,
)


def write(tmp_path, text, name="data.libsvm"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


class TestChenExample:
    def test_worker_gradients_at_zero(self):
        prob = chen_example()
        assert prob.worker_grad(0, np.array([0.0]))[0] == -3.0
        assert prob.worker_grad(1, np.array([0.0]))[0] == 3.0
        assert prob.grad(np.array([0.0]))[0] == 0.0

    def test_mean_gradient_and_value(self):
        prob = chen_example()
        assert prob.grad(np.array([2.0]))[0] == pytest.approx(2.0)
        assert prob.value(np.array([0.0])) == pytest.approx(4.5)
        assert prob.f_star == pytest.approx(4.5)

    @given(st.floats(-50, 50))
    @settings(max_examples=100, deadline=None)
    def test_mean_gradient_is_identity(self, x):
        prob = chen_example()
        assert prob.grad(np.array([x]))[0] == pytest.approx(x, rel=1e-14, abs=1e-12)


class TestScaledQuadratic:
    def test_gradient_and_value(self):
        prob = scaled_quadratic(2.0, d=2, n_workers=3)
        x = np.array([0.0, -1.0])
        np.testing.assert_array_equal(prob.grad(x), [0.0, -2.0])
        assert float(l2(prob.grad(x)) ** 2) == pytest.approx(4.0)
        assert prob.value(np.array([0.0, -0.07])) == pytest.approx(0.0049)
        assert prob.grad(np.zeros(2)).tolist() == [0.0, 0.0]

    def test_grad_sq_identity(self):
        prob = scaled_quadratic(3.7, d=5, n_workers=2)
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.standard_normal(5)
            assert float(l2(prob.grad(x)) ** 2) == pytest.approx(
                prob.L**2 * float(l2(x) ** 2), rel=1e-14
            )

    def test_rejects_bad_L(self):
        with pytest.raises(InvalidParameterError):
            scaled_quadratic(0.0)


class TestLibsvm:
    def test_basic_parse(self, tmp_path):
        ds = load_libsvm(write(tmp_path, "+1 3:0.5 7:1.0\n-1 1:2.0\n"))
        assert ds.m == 2 and ds.d == 7
        assert ds.row_indices[0].tolist() == [2, 6]
        assert ds.row_values[0].tolist() == [0.5, 1.0]
        assert ds.labels.tolist() == [1.0, -1.0]

    def test_zero_one_labels_map_by_sorted_order(self, tmp_path):
        ds = load_libsvm(write(tmp_path, "0 1:1\n1 1:2\n"))
        assert ds.labels.tolist() == [-1.0, 1.0]

    def test_empty_file(self, tmp_path):
        ds = load_libsvm(write(tmp_path, ""))
        assert ds.m == 0
        with pytest.raises(ConfigurationError):
            nonconvex_logreg(partition(ds, 1, 0), 0.0)

    def test_decreasing_indices_rejected_with_line(self, tmp_path):
        with pytest.raises(DatasetParseError) as e:
            load_libsvm(write(tmp_path, "+1 1:1\n1 5:2 3:1\n"))
        assert e.value.line_no == 2

    def test_bad_token_rejected(self, tmp_path):
        with pytest.raises(DatasetParseError):
            load_libsvm(write(tmp_path, "+1 john:1\n"))
        with pytest.raises(DatasetParseError):
            load_libsvm(write(tmp_path, "cat 1:1\n"))
        with pytest.raises(DatasetParseError):
            load_libsvm(write(tmp_path, "+1 0:1\n"))

    def test_three_labels_rejected(self, tmp_path):
        with pytest.raises(UnsupportedDatasetError):
            load_libsvm(write(tmp_path, "1 1:1\n2 1:1\n3 1:1\n"))


class TestNormalize:
    def test_scales_to_unit(self, tmp_path):
        ds = load_libsvm(write(tmp_path, "+1 1:3 2:4\n-1 1:1\n"))
        out = normalize_rows(ds)
        assert out.row_values[0].tolist() == [0.6, 0.8]
        assert out.row_values[1].tolist() == [1.0]
        # original untouched
        assert ds.row_values[0].tolist() == [3.0, 4.0]

    def test_unit_and_zero_rows(self):
        ds = SparseDataset(
            [np.array([0]), np.array([], dtype=np.int64)],
            [np.array([1.0]), np.array([])],
            np.array([1.0, -1.0]),
            d=2,
        )
        out = normalize_rows(ds)
        assert out.row_values[0].tolist() == [1.0]
        assert out.row_values[1].tolist() == []

    def test_norms_after(self, tmp_path):
        ds = load_libsvm(write(tmp_path, "\n".join(
            f"+1 {j + 1}:{0.1 * (j + 1):g} {j + 2}:1.5" for j in range(8)
        ) + "\n"))
        out = normalize_rows(ds)
        for v in out.row_values:
            assert float(l2(v)) == pytest.approx(1.0, abs=1e-12)


class TestPartition:
    def _ds(self, m, d=6):
        rng = np.random.default_rng(1)
        rows_i, rows_v = [], []
        for _ in range(m):
            nnz = rng.integers(1, d)
            rows_i.append(np.sort(rng.choice(d, size=nnz, replace=False)))
            rows_v.append(rng.uniform(0.1, 1, size=nnz))
        labels = rng.choice([-1.0, 1.0], size=m)
        return SparseDataset(rows_i, rows_v, labels, d=d)

    def test_even_split(self):
        shards = partition(self._ds(8), 4, seed=0)
        assert [s.m for s in shards] == [2, 2, 2, 2]

    def test_uneven_split(self):
        shards = partition(self._ds(7), 4, seed=0)
        assert sorted(s.m for s in shards) == [1, 2, 2, 2]
        assert max(s.m for s in shards) - min(s.m for s in shards) <= 1

    def test_deterministic(self):
        ds = self._ds(13)
        a = partition(ds, 3, seed=5)
        b = partition(ds, 3, seed=5)
        for sa, sb in zip(a, b):
            assert sa.labels.tolist() == sb.labels.tolist()
            for ra, rb in zip(sa.row_values, sb.row_values):
                assert np.array_equal(ra, rb)

    @given(st.integers(1, 30), st.integers(1, 6), st.integers(0, 100))
    @settings(max_examples=60, deadline=None)
    def test_multiset_preserved(self, m, n, seed):
        ds = self._ds(m)
        shards = partition(ds, n, seed)
        assert sum(s.m for s in shards) == m
        merged = SparseDataset(
            [i for s in shards for i in s.row_indices],
            [v for s in shards for v in s.row_values],
            np.concatenate([s.labels for s in shards]),
            d=ds.d,
        )
        assert merged.row_checksum() == ds.row_checksum()

    def test_bad_worker_count(self):
        with pytest.raises(InvalidParameterError):
            partition(self._ds(4), 0, 0)


class TestNonconvexLogReg:
    def _problem(self, tmp_path, n_workers=2, lam=1e-3):
        text = "\n".join(
            [
                "+1 1:0.9 3:0.2",
                "-1 2:0.7 4:0.4",
                "+1 1:0.1 2:0.3 4:0.8",
                "-1 3:0.5",
                "+1 2:0.6 3:0.1",
                "-1 1:0.4 4:0.9",
            ]
        ) + "\n"
        ds = normalize_rows(load_libsvm(write(tmp_path, text)))
        return nonconvex_logreg(partition(ds, n_workers, 0), lam)

    def test_value_at_zero(self, tmp_path):
        prob = self._problem(tmp_path)
        assert prob.value(np.zeros(prob.d)) == pytest.approx(np.log(2.0), rel=1e-12)

    def test_regularizer_unit_vector(self, tmp_path):
        prob = self._problem(tmp_path, lam=1e-3)
        e1 = np.zeros(prob.d)
        e1[0] = 1.0
        loss_only = self._problem(tmp_path, lam=0.0)
        reg = prob.worker_value(0, e1) - loss_only.worker_value(0, e1)
        assert reg == pytest.approx(5e-4, rel=1e-9)

    def test_gradients_match_finite_differences(self, tmp_path):
        prob = self._problem(tmp_path)
        rng = np.random.default_rng(3)
        for i in range(prob.n_workers):
            for _ in range(10):
                x = rng.uniform(-1, 1, size=prob.d)
                num = central_difference_gradient(
                    lambda z: prob.worker_value(i, z), x, h=1e-6
                )
                ana = prob.worker_grad(i, x)
                assert float(l2(ana - num)) <= 1e-5 * max(1.0, float(l2(num)))

    def test_smoothness_bound_holds_on_secants(self, tmp_path):
        prob = self._problem(tmp_path)
        rng = np.random.default_rng(4)
        for _ in range(50):
            x = rng.uniform(-2, 2, size=prob.d)
            y = rng.uniform(-2, 2, size=prob.d)
            if float(l2(x - y)) < 1e-9:
                continue
            for i in range(prob.n_workers):
                slope = float(
                    l2(prob.worker_grad(i, x) - prob.worker_grad(i, y)) / l2(x - y)
                )
                assert slope <= prob.L * (1 + 1e-9)

    def test_shard_dim_mismatch(self, tmp_path):
        a = load_libsvm(write(tmp_path, "+1 1:1\n-1 2:1\n", "a.libsvm"))
        b = load_libsvm(write(tmp_path, "+1 3:1\n-1 5:1\n", "b.libsvm"))
        with pytest.raises(ConfigurationError):
            nonconvex_logreg([a, b], 0.0)

    def test_l_estimate_formula(self, tmp_path):
        prob = self._problem(tmp_path, lam=1e-3)
        fro = max(
            sum(float((v * v).sum()) for v in s.row_values) / s.m
            for s in prob.shards
        )
        assert prob.L == pytest.approx(0.25 * fro + 2e-3, rel=1e-12)


class TestGradientConsistency:
    def test_all_problem_kinds(self, tmp_path):
        text = "\n".join(
            f"{'+1' if k % 2 else '-1'} {k % 5 + 1}:{0.2 + 0.1 * k:g} {k % 5 + 2}:0.5"
            for k in range(10)
        ) + "\n"
        ds = normalize_rows(load_libsvm(write(tmp_path, text)))
        probs = [
            chen_example(),
            scaled_quadratic(2.0, d=3, n_workers=2),
            nonconvex_logreg(partition(ds, 2, 0), 1e-3),
        ]
        rng = np.random.default_rng(9)
        for prob in probs:
            for _ in range(10):
                x = rng.uniform(-1, 1, size=prob.d)
                num = central_difference_gradient(prob.value, x, h=1e-6)
                ana = prob.grad(x)
                assert float(l2(ana - num)) <= 1e-5 * max(1.0, float(l2(num)))
