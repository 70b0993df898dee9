import numpy as np
import pytest

from ssdl.data import labels_to_matrix
from ssdl.model import (ActiveMasks, Classifier, HyperParams,
                        candidate_targets, classifier_init,
                        classifier_update, dictionary_update,
                        lipschitz_estimate, objective, sparse_coding,
                        sparse_coding_batched, sparse_coding_gradient,
                        update_active_masks, update_probabilities)
from ssdl.solver import FistaParams, soft_threshold

import oracles
from instances import random_instance


def objective_by_triple_loop(X, D, A, graph, clf, P, masks, Y, hp):
    """Scalar-loop evaluation of the full objective."""
    n, N = X.shape
    C, N_l = Y.shape
    val = 0.0
    R = X - D @ A
    for i in range(n):
        for j in range(N):
            val += R[i, j] ** 2
    for i in range(A.shape[0]):
        for j in range(N):
            val += hp.lam * abs(A[i, j])
    L = graph.L.toarray()
    for a in range(A.shape[0]):
        for i in range(N):
            for j in range(N):
                val += hp.beta * A[a, i] * L[i, j] * A[a, j]
    T = candidate_targets(C)
    for c in range(C):
        for i in range(N_l):
            s = clf.W[c] @ A[:, i] + clf.b[c]
            val += hp.gamma * masks.labelled[c, i] * (s - Y[c, i]) ** 2
    for k in range(C):
        for c in range(C):
            for j in range(N - N_l):
                s = clf.W[c] @ A[:, N_l + j] + clf.b[c]
                val += hp.gamma * masks.unlabelled[k, c, j] \
                    * P[k, j] ** hp.r * (s - T[k, c]) ** 2
    val += hp.mu * (np.sum(clf.W ** 2) + np.sum(clf.b ** 2))
    return val


class TestObjective:
    def test_zero_codes_zero_classifier_reduces_to_data_norm(self):
        inst = random_instance(0, gamma=0.0, beta=0.0, mu=0.0)
        zero_clf = Classifier(W=np.zeros_like(inst["clf"].W),
                              b=np.zeros_like(inst["clf"].b))
        A = np.zeros_like(inst["A"])
        masks = update_active_masks(zero_clf, A, inst["Y"],
                                    A.shape[1] - inst["Y"].shape[1])
        hp = HyperParams(lam=0.3, beta=0.0, gamma=0.0, mu=0.0, p=4, k=3)
        val = objective(inst["X"], inst["D"], A, inst["graph"], zero_clf,
                        inst["P"], masks, inst["Y"], hp)
        assert val == pytest.approx(float(np.sum(inst["X"] ** 2)))

    def test_gamma_beta_zero_is_lasso_objective(self):
        inst = random_instance(1)
        hp = HyperParams(lam=0.3, beta=0.0, gamma=0.0, mu=0.0, p=4, k=3)
        zero_clf = Classifier(W=np.zeros_like(inst["clf"].W),
                              b=np.zeros_like(inst["clf"].b))
        val = objective(inst["X"], inst["D"], inst["A"], inst["graph"],
                        zero_clf, inst["P"], inst["masks"], inst["Y"], hp)
        assert val == pytest.approx(
            oracles.lasso_objective(inst["X"], inst["D"], inst["A"], 0.3))

    def test_matches_triple_loop(self):
        inst = random_instance(2, n=6, p=4, N_l=4, N_u=4, C=2)
        val = objective(inst["X"], inst["D"], inst["A"], inst["graph"],
                        inst["clf"], inst["P"], inst["masks"], inst["Y"],
                        inst["hp"])
        ref = objective_by_triple_loop(
            inst["X"], inst["D"], inst["A"], inst["graph"], inst["clf"],
            inst["P"], inst["masks"], inst["Y"], inst["hp"])
        assert val == pytest.approx(ref, abs=1e-10)


class TestActiveMasks:
    def test_positive_label_inside_margin_is_active(self):
        clf = Classifier(W=np.array([[0.5]]), b=np.array([0.0]))
        A = np.array([[1.0]])  # score 0.5, label +1 -> margin 0.5 < 1
        Y = np.array([[1.0]])
        masks = update_active_masks(clf, A, Y, 0)
        assert masks.labelled[0, 0] == 1.0

    def test_negative_label_outside_margin_is_inactive(self):
        clf = Classifier(W=np.array([[-2.0]]), b=np.array([0.0]))
        A = np.array([[1.0]])  # score -2, label -1 -> margin 2 >= 1
        Y = np.array([[-1.0]])
        masks = update_active_masks(clf, A, Y, 0)
        assert masks.labelled[0, 0] == 0.0

    def test_exact_margin_is_inactive(self):
        clf = Classifier(W=np.array([[1.0]]), b=np.array([0.0]))
        A = np.array([[1.0]])  # margin exactly 1
        Y = np.array([[1.0]])
        masks = update_active_masks(clf, A, Y, 0)
        assert masks.labelled[0, 0] == 0.0

    def test_matches_elementwise_definition(self):
        inst = random_instance(3, C=3, N_l=6, N_u=5)
        masks = inst["masks"]
        clf, A, Y = inst["clf"], inst["A"], inst["Y"]
        C, N_l = Y.shape
        T = candidate_targets(C)
        for c in range(C):
            for i in range(N_l):
                s = clf.W[c] @ A[:, i] + clf.b[c]
                assert masks.labelled[c, i] == float(Y[c, i] * s < 1.0)
        for k in range(C):
            for c in range(C):
                for j in range(5):
                    s = clf.W[c] @ A[:, N_l + j] + clf.b[c]
                    assert masks.unlabelled[k, c, j] == float(T[k, c] * s < 1)


class TestProbabilities:
    def build(self, e, r):
        """Probability column for a hand-built cost vector e."""
        C = len(e)
        # one unlabelled sample, classifier chosen so costs equal e:
        # use a direct call through a crafted mask/score setup instead of
        # reverse-engineering scores; exercise the solver via the public
        # function by planting costs through a diagonal construction.
        clf = Classifier(W=np.zeros((C, 1)), b=np.zeros(C))
        A_u = np.zeros((1, 1))
        masks = ActiveMasks(labelled=np.zeros((C, 0)),
                            unlabelled=np.zeros((C, C, 1)))
        # cost e_k = sum_c Q[k,c,0] * (0 - T[k,c])^2 = number of active c
        # with unit residual; instead scale residuals via b
        # Simplest: emulate internal formula directly.
        raise NotImplementedError

    def test_kkt_closed_form_r2(self):
        # e = (1, 3) at r = 2 -> p proportional to 1/e -> (0.75, 0.25)
        p = self.simplex_solve(np.array([1.0, 3.0]), 2.0)
        np.testing.assert_allclose(p, [0.75, 0.25], atol=1e-12)

    @staticmethod
    def simplex_solve(e, r):
        """Drive update_probabilities with a state whose costs equal e."""
        C = len(e)
        # scores 0 everywhere, so residual to target +/-1 is 1 per class;
        # activate exactly ceil(e_k) pattern is impossible for non-integers,
        # so instead scale the bias per class pattern: pick b so that
        # (b_c - T[k,c])^2 terms reproduce e via a single active entry.
        # With Q[k, c, :] = 1 only for c = k, cost_k = (b_k - 1)^2.
        b = 1.0 - np.sqrt(e)
        clf = Classifier(W=np.zeros((C, 1)), b=b)
        A_u = np.zeros((1, 1))
        unlabelled = np.zeros((C, C, 1))
        for k in range(C):
            unlabelled[k, k, 0] = 1.0
        masks = ActiveMasks(labelled=np.zeros((C, 0)), unlabelled=unlabelled)
        P = update_probabilities(clf, A_u, masks, r)
        return P[:, 0]

    def test_zero_cost_class_absorbs_mass(self):
        for r in (1.0, 1.7, 3.0):
            p = self.simplex_solve(np.array([0.0, 5.0]), r)
            np.testing.assert_allclose(p, [1.0, 0.0])

    def test_r1_tie_split(self):
        p = self.simplex_solve(np.array([2.0, 2.0, 7.0]), 1.0)
        np.testing.assert_allclose(p, [0.5, 0.5, 0.0])

    def test_beats_random_simplex_points(self):
        rng = np.random.default_rng(4)
        for r in (1.3, 2.0, 4.0):
            e = rng.exponential(2.0, size=4) + 0.05
            p = self.simplex_solve(e, r)
            assert abs(p.sum() - 1.0) < 1e-10
            assert np.all(p >= 0)
            val = oracles.simplex_power_cost(p, e, r)
            pts = oracles.random_simplex_points(4, 10000, rng)
            best = min(oracles.simplex_power_cost(q, e, r) for q in pts)
            assert val <= best + 1e-9

    def test_grid_search_two_class(self):
        e = np.array([1.0, 3.0])
        p = self.simplex_solve(e, 2.0)
        grid = np.linspace(0.0, 1.0, 2001)
        vals = grid ** 2 * e[0] + (1 - grid) ** 2 * e[1]
        assert oracles.simplex_power_cost(p, e, 2.0) <= vals.min() + 1e-3

    def test_columns_live_on_simplex(self):
        inst = random_instance(5, C=3, N_u=8)
        P = update_probabilities(inst["clf"], inst["A"][:, 5:],
                                 inst["masks"], inst["hp"].r)
        np.testing.assert_allclose(P.sum(axis=0), 1.0, atol=1e-10)
        assert np.all(P >= 0) and np.all(P <= 1)


class TestCodingGradient:
    def test_beta_gamma_zero_reduces_to_reconstruction_term(self):
        inst = random_instance(6)
        hp = HyperParams(lam=0.3, beta=0.0, gamma=0.0, mu=0.0, p=4, k=3)
        G = sparse_coding_gradient(inst["A"], inst["X"], inst["D"],
                                   inst["graph"], inst["clf"], inst["P"],
                                   inst["masks"], inst["Y"], hp)
        expect = -2.0 * inst["D"].T @ (inst["X"] - inst["D"] @ inst["A"])
        np.testing.assert_allclose(G, expect, atol=1e-12)

    def test_zero_at_unpenalized_least_squares_solution(self):
        rng = np.random.default_rng(7)
        D = rng.standard_normal((8, 4))   # tall: unique LS solution
        X = rng.standard_normal((8, 3))
        A_star = np.linalg.lstsq(D, X, rcond=None)[0]
        hp = HyperParams(lam=0.0, beta=0.0, gamma=0.0, mu=0.0, p=4, k=3)
        Y = labels_to_matrix(np.array([0, 1]), 2)
        clf = Classifier(W=np.zeros((2, 4)), b=np.zeros(2))
        masks = update_active_masks(clf, A_star, Y, 1)
        G = sparse_coding_gradient(A_star, X, D, None, clf,
                                   np.full((2, 1), 0.5), masks, Y, hp)
        assert np.abs(G).max() < 1e-10

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_central_finite_differences(self, seed):
        inst = random_instance(seed, n=6, p=4, N_l=4, N_u=4, C=2)
        from ssdl.model import _coding_problem
        problem = _coding_problem(inst["X"], inst["D"], inst["graph"],
                                  inst["clf"], inst["P"], inst["masks"],
                                  inst["Y"], inst["hp"])
        A = inst["A"].copy()
        G = problem.smooth_gradient(A)
        G_fd = oracles.finite_difference_gradient(problem.smooth_value, A)
        rel = np.abs(G - G_fd).max() / max(np.abs(G_fd).max(), 1e-12)
        assert rel < 1e-5


class TestSparseCoding:
    def test_orthonormal_closed_form_when_only_lasso_terms(self):
        rng = np.random.default_rng(8)
        D, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        X = rng.standard_normal((6, 4))
        hp = HyperParams(lam=0.4, beta=0.0, gamma=0.0, mu=0.0, p=6, k=2)
        A, _ = sparse_coding(np.zeros((6, 4)), X, D, None, None, None, None,
                             None, hp, FistaParams(max_iters=200, rel_tol=0.0))
        np.testing.assert_allclose(A, soft_threshold(D.T @ X, 0.2), atol=1e-6)

    def test_objective_never_increases_from_start(self):
        inst = random_instance(9)
        hp = inst["hp"]
        from ssdl.model import _coding_problem
        problem = _coding_problem(inst["X"], inst["D"], inst["graph"],
                                  inst["clf"], inst["P"], inst["masks"],
                                  inst["Y"], hp)
        start = problem.smooth_value(inst["A"]) \
            + problem.nonsmooth_value(inst["A"])
        A, _ = sparse_coding(inst["A"], inst["X"], inst["D"], inst["graph"],
                             inst["clf"], inst["P"], inst["masks"], inst["Y"],
                             hp, FistaParams())
        end = problem.smooth_value(A) + problem.nonsmooth_value(A)
        assert end <= start + 1e-10 * max(1.0, abs(start))

    def test_tiny_instance_matches_coordinate_descent(self):
        rng = np.random.default_rng(10)
        D = rng.standard_normal((5, 3))
        X = rng.standard_normal((5, 4))
        lam = 0.3
        hp = HyperParams(lam=lam, beta=0.0, gamma=0.0, mu=0.0, p=3, k=2)
        A, _ = sparse_coding(np.zeros((3, 4)), X, D, None, None, None, None,
                             None, hp, FistaParams(max_iters=400, rel_tol=0.0))
        A_cd = oracles.cd_lasso(X, D, lam, n_iters=3000)
        obj = oracles.lasso_objective(X, D, A, lam)
        ref = oracles.lasso_objective(X, D, A_cd, lam)
        assert obj <= ref + 1e-4


class TestBatchedCoding:
    def test_single_batch_identical_to_full(self):
        inst = random_instance(11)
        params = FistaParams(max_iters=30)
        rng = np.random.default_rng(0)
        A_full, _ = sparse_coding(inst["A"], inst["X"], inst["D"],
                                  inst["graph"], inst["clf"], inst["P"],
                                  inst["masks"], inst["Y"], inst["hp"],
                                  params)
        A_batch = sparse_coding_batched(inst["A"], inst["X"], inst["D"],
                                        inst["graph"], inst["clf"],
                                        inst["P"], inst["masks"], inst["Y"],
                                        inst["hp"], params, batch_count=1,
                                        epochs=1, rng=rng)
        np.testing.assert_allclose(A_batch, A_full, atol=1e-12)

    def test_beta_zero_partition_independent(self):
        # without the manifold term the columns decouple, so any partition
        # converges to the same (unique, since D has full column rank)
        # minimizer; solve each batch to convergence before comparing
        inst = random_instance(12, beta=0.0)
        params = FistaParams(max_iters=2000, rel_tol=0.0)
        outs = []
        for seed in (1, 2):
            rng = np.random.default_rng(seed)
            outs.append(sparse_coding_batched(
                inst["A"], inst["X"], inst["D"], None, inst["clf"],
                inst["P"], inst["masks"], inst["Y"], inst["hp"], params,
                batch_count=3, epochs=1, rng=rng))
        np.testing.assert_allclose(outs[0], outs[1], atol=1e-5)

    def test_two_batches_close_to_full_objective(self):
        inst = random_instance(13, n=8, p=5, N_l=20, N_u=20, k=4)
        params = FistaParams(max_iters=50)
        from ssdl.model import _coding_problem
        problem = _coding_problem(inst["X"], inst["D"], inst["graph"],
                                  inst["clf"], inst["P"], inst["masks"],
                                  inst["Y"], inst["hp"])

        def full_obj(A):
            return problem.smooth_value(A) + problem.nonsmooth_value(A)

        A_full, _ = sparse_coding(inst["A"], inst["X"], inst["D"],
                                  inst["graph"], inst["clf"], inst["P"],
                                  inst["masks"], inst["Y"], inst["hp"],
                                  params)
        A_batch = sparse_coding_batched(
            inst["A"], inst["X"], inst["D"], inst["graph"], inst["clf"],
            inst["P"], inst["masks"], inst["Y"], inst["hp"], params,
            batch_count=2, epochs=10, rng=np.random.default_rng(3))
        assert full_obj(A_batch) <= full_obj(A_full) * 1.01 + 1e-9


class TestDictionaryUpdate:
    def test_identity_codes_recover_data(self):
        rng = np.random.default_rng(14)
        X = rng.standard_normal((5, 4))
        A = np.eye(4)
        D0 = rng.standard_normal((5, 4))
        D, _ = dictionary_update(D0, X, A, alpha=100.0,
                                 fista_params=FistaParams(max_iters=400,
                                                          rel_tol=0.0))
        np.testing.assert_allclose(D, X, atol=1e-6)

    def test_column_norms_bounded(self):
        inst = random_instance(15)
        D, _ = dictionary_update(inst["D"] * 10, inst["X"], inst["A"], 1.0,
                                 FistaParams())
        assert np.linalg.norm(D, axis=0).max() <= 1.0 + 1e-12

    def test_reconstruction_never_increases(self):
        inst = random_instance(16)
        before = float(np.sum((inst["X"] - inst["D"] @ inst["A"]) ** 2))
        D, _ = dictionary_update(inst["D"], inst["X"], inst["A"], 1.0,
                                 FistaParams())
        after = float(np.sum((inst["X"] - D @ inst["A"]) ** 2))
        assert after <= before + 1e-10 * max(1.0, before)

    def test_matches_slow_projected_gradient(self):
        rng = np.random.default_rng(17)
        X = rng.standard_normal((6, 10))
        A = rng.standard_normal((4, 10)) * 0.7
        D0 = rng.standard_normal((6, 4))
        D, _ = dictionary_update(D0, X, A, 1.0,
                                 FistaParams(max_iters=500, rel_tol=0.0))
        step = 0.45 / (np.linalg.norm(A, 2) ** 2)
        D_ref = oracles.projected_gradient_dictionary(D0, X, A, 1.0, step,
                                                      20000)
        obj = float(np.sum((X - D @ A) ** 2))
        ref = float(np.sum((X - D_ref @ A) ** 2))
        assert obj <= ref + 1e-4


class TestClassifierUpdate:
    def test_supervised_all_active_equals_closed_form_init(self):
        inst = random_instance(18, N_u=0)
        Y = inst["Y"]
        C, N_l = Y.shape
        masks = ActiveMasks(labelled=np.ones((C, N_l)),
                            unlabelled=np.zeros((C, C, 0)))
        up = classifier_update(inst["A"][:, :N_l], Y, np.zeros((C, 0)),
                               masks, gamma=0.8, mu=1.6, r=2.0)
        init = classifier_init(inst["A"][:, :N_l], Y, gamma=0.8, mu=1.6)
        np.testing.assert_allclose(up.W, init.W, atol=1e-10)
        np.testing.assert_allclose(up.b, init.b, atol=1e-10)

    def test_huge_ridge_shrinks_to_zero(self):
        inst = random_instance(19)
        up = classifier_update(inst["A"], inst["Y"], inst["P"],
                               inst["masks"], gamma=1.0, mu=1e12, r=1.7)
        assert np.abs(up.W).max() < 1e-9
        assert np.abs(up.b).max() < 1e-9

    def test_matches_gradient_descent_oracle(self):
        inst = random_instance(20, n=5, p=3, N_l=4, N_u=3, C=2)
        gamma, mu, r = 0.9, 0.7, 1.7
        up = classifier_update(inst["A"], inst["Y"], inst["P"],
                               inst["masks"], gamma, mu, r)
        C, N_l = inst["Y"].shape
        p = inst["A"].shape[0]
        T = candidate_targets(C)
        Pr = inst["P"] ** r
        Aug = np.vstack([inst["A"], np.ones((1, inst["A"].shape[1]))])

        for c in range(C):
            def grad(wb, c=c):
                g = 2.0 * mu * wb
                for i in range(N_l):
                    w = gamma * inst["masks"].labelled[c, i]
                    resid = wb @ Aug[:, i] - inst["Y"][c, i]
                    g += 2.0 * w * resid * Aug[:, i]
                for k in range(C):
                    for j in range(inst["A"].shape[1] - N_l):
                        w = gamma * inst["masks"].unlabelled[k, c, j] \
                            * Pr[k, j]
                        resid = wb @ Aug[:, N_l + j] - T[k, c]
                        g += 2.0 * w * resid * Aug[:, N_l + j]
                return g

            ref = oracles.gradient_descent_quadratic(
                grad, np.zeros(p + 1), step=0.02, n_iters=40000)
            got = np.concatenate([up.W[c], [up.b[c]]])
            np.testing.assert_allclose(got, ref, atol=1e-6)

    def test_normal_equations_gradient_zero(self):
        inst = random_instance(21, C=3, N_u=6)
        gamma, mu, r = 1.1, 0.4, 2.0
        up = classifier_update(inst["A"], inst["Y"], inst["P"],
                               inst["masks"], gamma, mu, r)
        C, N_l = inst["Y"].shape
        T = candidate_targets(C)
        Pr = inst["P"] ** r
        Aug = np.vstack([inst["A"], np.ones((1, inst["A"].shape[1]))])
        for c in range(C):
            wb = np.concatenate([up.W[c], [up.b[c]]])
            g = 2.0 * mu * wb
            w_l = gamma * inst["masks"].labelled[c]
            g += 2.0 * Aug[:, :N_l] @ (w_l * (wb @ Aug[:, :N_l]
                                              - inst["Y"][c]))
            w_u = gamma * inst["masks"].unlabelled[:, c, :] * Pr
            resid = wb @ Aug[:, N_l:] - T[:, c][:, None]
            g += 2.0 * Aug[:, N_l:] @ np.sum(w_u * resid, axis=0)
            assert np.abs(g).max() < 1e-8


class TestClassifierInit:
    def test_identity_codes_interpolate_labels(self):
        # square augmented system stays exactly solvable at mu ~ 0
        Y = labels_to_matrix(np.array([0, 1, 0]), 2)
        A_l = np.eye(3)[:2]  # p=2, N_l=3: augmented matrix is 3x3
        clf = classifier_init(A_l, Y, gamma=1.0, mu=1e-12)
        S = clf.scores(A_l)
        np.testing.assert_allclose(S, Y, atol=1e-5)

    def test_matches_direct_linear_solve(self):
        rng = np.random.default_rng(22)
        A_l = rng.standard_normal((4, 7))
        Y = labels_to_matrix(rng.integers(0, 3, 7), 3)
        gamma, mu = 0.7, 1.4
        clf = classifier_init(A_l, Y, gamma, mu)
        Aug = np.vstack([A_l, np.ones((1, 7))])
        G = Aug @ Aug.T + (mu / gamma) * np.eye(5)
        Wp = Y @ Aug.T @ np.linalg.inv(G)
        np.testing.assert_allclose(np.hstack([clf.W, clf.b[:, None]]), Wp,
                                   atol=1e-10)

    def test_huge_ridge_limit(self):
        rng = np.random.default_rng(23)
        A_l = rng.standard_normal((4, 6))
        Y = labels_to_matrix(rng.integers(0, 2, 6), 2)
        clf = classifier_init(A_l, Y, gamma=1.0, mu=1e14)
        assert np.abs(clf.W).max() < 1e-9


class TestLipschitzEstimate:
    def test_identity_dictionary_baseline(self):
        D = np.eye(4)
        est = lipschitz_estimate(D, None, np.zeros((2, 4)), beta=0.0,
                                 gamma=0.0, C=2)
        assert est == pytest.approx(2.0, rel=1e-6)

    def test_scaling_quadruples_first_term(self):
        rng = np.random.default_rng(24)
        D = rng.standard_normal((5, 4))
        one = lipschitz_estimate(D, None, np.zeros((2, 4)), 0.0, 0.0, 2)
        two = lipschitz_estimate(2 * D, None, np.zeros((2, 4)), 0.0, 0.0, 2)
        assert two == pytest.approx(4 * one, rel=1e-5)

    def test_within_tolerance_of_dense_eigensolver(self):
        inst = random_instance(25, C=3)
        est = lipschitz_estimate(inst["D"], inst["graph"], inst["clf"].W,
                                 beta=0.4, gamma=0.7, C=3)
        L = inst["graph"].L.toarray()
        exact = 2.0 * (np.linalg.norm(inst["D"], 2) ** 2
                       + 0.4 * np.max(np.linalg.eigvalsh(L))
                       + 0.7 * 3 * np.linalg.norm(inst["clf"].W, 2) ** 2)
        assert est == pytest.approx(exact, rel=0.05)
