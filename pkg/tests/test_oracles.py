import math

import numpy as np
import pytest

from clipsim.core import l2
from clipsim.errors import ConfigurationError, InvalidParameterError
from clipsim.oracles import (
    GradientOracle,
    clipped_three_point_mc_mean,
    three_point_atoms,
    three_point_clipped_mean,
)
from clipsim.problems import (
    chen_example,
    load_libsvm,
    nonconvex_logreg,
    normalize_rows,
    partition,
    scaled_quadratic,
)


def logreg_problem(tmp_path, n_workers=2):
    text = "\n".join(
        f"{'+1' if k % 2 else '-1'} {k % 4 + 1}:{0.3 + 0.05 * k:g} {k % 4 + 3}:0.7"
        for k in range(12)
    ) + "\n"
    p = tmp_path / "toy.libsvm"
    p.write_text(text)
    ds = normalize_rows(load_libsvm(str(p)))
    return nonconvex_logreg(partition(ds, n_workers, 0), 1e-3)


class TestAtoms:
    def test_scaling_and_sum(self):
        atoms = three_point_atoms(5.0)
        s = math.sqrt(3 * 25 / 100.0)
        np.testing.assert_allclose(
            atoms, np.array([[3, 0], [0, 4], [-3, -4]]) * s, rtol=0, atol=0
        )
        np.testing.assert_allclose(atoms.sum(axis=0), [0.0, 0.0], atol=1e-15)

    def test_norms(self):
        sigma = 5.0
        atoms = three_point_atoms(sigma)
        want = np.array([3.0, 4.0, 5.0]) * sigma * math.sqrt(3) / 10.0
        np.testing.assert_allclose(l2(atoms), want, rtol=1e-14)

    def test_clipped_mean_closed_form(self):
        np.testing.assert_allclose(
            three_point_clipped_mean(5.0, 1.0), [2.0 / 15, 1.0 / 15], rtol=1e-15
        )
        np.testing.assert_allclose(
            three_point_clipped_mean(5.0, 0.1), [0.2 / 15, 0.1 / 15], rtol=1e-15
        )

    def test_clipped_mean_linear_in_tau(self):
        a = three_point_clipped_mean(5.0, 0.5)
        b = three_point_clipped_mean(5.0, 1.0)
        np.testing.assert_allclose(2 * a, b, rtol=1e-14)

    def test_precondition(self):
        # valid only while every atom is clipped: tau < 3 sigma sqrt(3) / 10
        with pytest.raises(InvalidParameterError):
            three_point_clipped_mean(5.0, 2.7)
        three_point_clipped_mean(5.0, 2.5)  # just under the threshold

    def test_mc_matches_closed_form(self):
        mc = clipped_three_point_mc_mean(5.0, 1.0, 200_000, seed=7)
        exact = three_point_clipped_mean(5.0, 1.0)
        assert np.abs(mc - exact).max() <= 3e-3


class TestDraw:
    def test_exact_is_bitwise(self):
        prob = scaled_quadratic(2.0, d=3, n_workers=2)
        oracle = GradientOracle("exact", 0)
        x = np.array([0.5, -1.0, 2.0])
        assert np.array_equal(oracle.draw(prob, 0, x, 0), prob.worker_grad(0, x))

    def test_replayable(self):
        prob = scaled_quadratic(1.0, d=4, n_workers=2)
        x = np.ones(4)
        a = [GradientOracle("gaussian", 3, sigma=1.0).draw(prob, 1, x, t) for t in range(5)]
        b = [GradientOracle("gaussian", 3, sigma=1.0).draw(prob, 1, x, t) for t in range(5)]
        for u, v in zip(a, b):
            assert np.array_equal(u, v)

    def test_worker_streams_independent_of_order(self):
        prob = scaled_quadratic(1.0, d=2, n_workers=3)
        x = np.ones(2)
        o1 = GradientOracle("gaussian", 9, sigma=1.0)
        fwd = [o1.draw(prob, i, x, 0) for i in range(3)]
        o2 = GradientOracle("gaussian", 9, sigma=1.0)
        rev = [o2.draw(prob, i, x, 0) for i in (2, 1, 0)][::-1]
        for u, v in zip(fwd, rev):
            assert np.array_equal(u, v)

    def test_three_point_draws_lie_on_atoms(self):
        prob = scaled_quadratic(2.0, d=2, n_workers=1)
        oracle = GradientOracle("three_point", 5, sigma=5.0)
        atoms = three_point_atoms(5.0)
        x = np.zeros(2)  # gradient vanishes: draw == noise
        for t in range(30):
            d = oracle.draw(prob, 0, x, t)
            assert any(np.array_equal(d, a) for a in atoms)

    def test_three_point_batch_mean_variance(self):
        # mean of B draws has 1/B the per-coordinate variance (rel tol 10%)
        n = 100_000
        atoms = three_point_atoms(5.0)
        one = GradientOracle("three_point", 11, sigma=5.0, batch_size=1)
        four = GradientOracle("three_point", 11, sigma=5.0, batch_size=4)
        v1 = atoms[one.noise_indices(0, n)].mean(axis=1).var(axis=0)
        v4 = atoms[four.noise_indices(0, n)].mean(axis=1).var(axis=0)
        np.testing.assert_allclose(v4, v1 / 4.0, rtol=0.1)

    def test_three_point_needs_2d(self):
        prob = chen_example()
        with pytest.raises(ConfigurationError):
            GradientOracle("three_point", 0, sigma=5.0).draw(prob, 0, np.zeros(1), 0)

    def test_minibatch_full_fraction_is_exact_bitwise(self, tmp_path):
        prob = logreg_problem(tmp_path)
        oracle = GradientOracle("minibatch", 0, batch_fraction=1.0)
        rng = np.random.default_rng(0)
        for t in range(3):
            x = rng.uniform(-1, 1, size=prob.d)
            for i in range(prob.n_workers):
                assert np.array_equal(
                    oracle.draw(prob, i, x, t), prob.worker_grad(i, x)
                )

    def test_minibatch_fraction_validated(self):
        with pytest.raises(InvalidParameterError):
            GradientOracle("minibatch", 0, batch_fraction=0.0)
        with pytest.raises(InvalidParameterError):
            GradientOracle("minibatch", 0, batch_fraction=1.5)
        with pytest.raises(InvalidParameterError):
            GradientOracle("minibatch", 0)

    def test_minibatch_subset_size(self, tmp_path):
        prob = logreg_problem(tmp_path)
        oracle = GradientOracle("minibatch", 1, batch_fraction=1 / 3)
        # ceil(m_i / 3) rows sampled; just check the call works and differs
        x = np.ones(prob.d) * 0.2
        a = oracle.draw(prob, 0, x, 0)
        b = oracle.draw(prob, 0, x, 1)
        assert a.shape == (prob.d,)
        assert not np.array_equal(a, b)

    def test_worker_index_validated(self):
        prob = scaled_quadratic(1.0, d=2, n_workers=2)
        with pytest.raises(InvalidParameterError):
            GradientOracle("exact", 0).draw(prob, 2, np.zeros(2), 0)
        with pytest.raises(InvalidParameterError):
            GradientOracle("exact", 0).draw(prob, 0, np.zeros(2), -1)


class TestUnbiasedness:
    @pytest.mark.parametrize("kind,kwargs", [
        ("exact", {}),
        ("gaussian", {"sigma": 0.5}),
        ("three_point", {"sigma": 5.0}),
    ])
    def test_empirical_mean_close(self, kind, kwargs):
        prob = scaled_quadratic(2.0, d=2, n_workers=1)
        rng = np.random.default_rng(17)
        K = 20_000
        sigma = kwargs.get("sigma", 0.0)
        for trial in range(3):
            x = rng.uniform(-1, 1, size=2)
            oracle = GradientOracle(kind, 100 + trial, **kwargs)
            acc = np.zeros(2)
            for t in range(K if kind != "exact" else 1):
                acc += oracle.draw(prob, 0, x, t)
            mean = acc / (K if kind != "exact" else 1)
            tol = 0.0 if kind == "exact" else 5 * sigma / math.sqrt(K)
            assert float(l2(mean - prob.worker_grad(0, x))) <= tol + 1e-12

    def test_minibatch_unbiased(self, tmp_path):
        prob = logreg_problem(tmp_path)
        x = np.full(prob.d, 0.3)
        oracle = GradientOracle("minibatch", 23, batch_fraction=0.5)
        K = 20_000
        acc = np.zeros(prob.d)
        for t in range(K):
            acc += oracle.draw(prob, 0, x, t)
        grad = prob.worker_grad(0, x)
        # row gradients are bounded by ~1, so 5/sqrt(K) is a generous radius
        assert float(l2(acc / K - grad)) <= 5.0 / math.sqrt(K)
