import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from riverlcp.lcp import (
    MlcpProblem,
    Sign,
    SolveStatus,
    VariableMeta,
    complementarity_violation,
    dump_problem,
    residual,
    solve_fb_newton,
    solve_lemke,
)

from conftest import enumerate_lcp_solutions, random_pure_lcp


def pure_problem(M, q):
    n = len(q)
    metas = [VariableMeta(i, "z", 0, i, None, Sign.NONNEGATIVE) for i in range(n)]
    return MlcpProblem(sp.csr_matrix(np.asarray(M, dtype=float)), np.asarray(q, dtype=float), metas)


def mixed_problem(M, q, signs):
    metas = [
        VariableMeta(i, "z", 0, i, None, Sign.FREE if s == "f" else Sign.NONNEGATIVE)
        for i, s in enumerate(signs)
    ]
    return MlcpProblem(sp.csr_matrix(np.asarray(M, dtype=float)), np.asarray(q, dtype=float), metas)


def test_fb_positive_q_forces_zero():
    p = pure_problem(np.eye(2), [1.0, 1.0])
    rep = solve_fb_newton(p, 0.0)
    assert rep.converged
    assert np.allclose(rep.z, 0.0)
    assert rep.residual == 0.0


def test_fb_negative_q_identity():
    p = pure_problem(np.eye(2), [-1.0, -1.0])
    rep = solve_fb_newton(p, np.array([5.0, 5.0]))
    assert rep.converged
    assert np.allclose(rep.z, [1.0, 1.0], atol=1e-9)


def test_residual_exact_solution_is_zero():
    p = pure_problem(np.eye(2), [1.0, 1.0])
    assert residual(p, np.zeros(2)) == 0.0


def test_residual_hand_value():
    # phi(1, 2) = sqrt(5) - 3, magnitude 0.76393...
    p = pure_problem(np.eye(2), [1.0, 1.0])
    assert residual(p, np.array([1.0, 0.0])) == pytest.approx(3.0 - np.sqrt(5.0), abs=1e-12)


def test_lemke_trivial():
    rep = solve_lemke(pure_problem(np.eye(2), [1.0, 1.0]))
    assert rep.converged
    assert np.allclose(rep.z, 0.0)


def test_lemke_skew_unique_basis():
    # all four complementary bases enumerated by hand: only {0,1} is feasible,
    # giving z = (1, 1); the covering-vector pivot sequence has length <= 3
    M = np.array([[0.0, -1.0], [1.0, 0.0]])
    q = np.array([1.0, -1.0])
    sols = enumerate_lcp_solutions(M, q)
    assert len(sols) == 1
    assert np.allclose(sols[0], [1.0, 1.0])
    rep = solve_lemke(pure_problem(M, q))
    assert rep.converged
    assert np.allclose(rep.z, [1.0, 1.0], atol=1e-10)
    assert rep.iterations <= 3


def test_lemke_ray_termination_on_infeasible():
    p = pure_problem(-np.eye(2), [-1.0, -1.0])
    rep = solve_lemke(p)
    assert rep.status is SolveStatus.RAY_TERMINATION


def test_mixed_equality_qp():
    # min (x1-1)^2 + (x2-2)^2 s.t. x1 + x2 = 2, x >= 0 -> x = (0.5, 1.5), lam = 1
    M = np.array([[2.0, 0.0, 1.0], [0.0, 2.0, 1.0], [1.0, 1.0, 0.0]])
    q = np.array([-2.0, -4.0, -2.0])
    p = mixed_problem(M, q, "nnf")
    for rep in (solve_fb_newton(p, 0.0), solve_lemke(p)):
        assert rep.converged
        assert np.allclose(rep.z, [0.5, 1.5, 1.0], atol=1e-8)


def test_mixed_free_on_own_equation():
    # y defined by its equation row y = x + 3; x complements 2x - 1 after
    # substitution, so x = 0.5, y = 3.5
    M = np.array([[1.0, 1.0], [-1.0, 1.0]])
    q = np.array([-4.0, -3.0])
    p = mixed_problem(M, q, "nf")
    for rep in (solve_fb_newton(p, 0.0), solve_lemke(p)):
        assert rep.converged
        assert np.allclose(rep.z, [0.5, 3.5], atol=1e-8)


def test_disconnected_row_converges():
    # a variable with an all-zero row and column stays feasible at any value
    M = np.zeros((1, 1))
    q = np.zeros(1)
    rep = solve_fb_newton(pure_problem(M, q), 1.0)
    assert rep.converged and rep.residual == 0.0


def test_converged_reports_meet_contract():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(1, 12))
        M, q = random_pure_lcp(rng, n)
        p = pure_problem(M, q)
        fb = solve_fb_newton(p, 1.0)
        lk = solve_lemke(p)
        assert fb.converged and lk.converged
        assert fb.residual <= 1e-9
        assert complementarity_violation(p, fb.z) <= 1e-8
        assert complementarity_violation(p, lk.z) <= 1e-8
        assert np.allclose(fb.z, lk.z, atol=1e-6)


def test_enumeration_cross_check_small():
    rng = np.random.default_rng(11)
    for _ in range(40):
        n = int(rng.integers(1, 7))
        M, q = random_pure_lcp(rng, n)
        p = pure_problem(M, q)
        sols = enumerate_lcp_solutions(M, q)
        assert len(sols) == 1  # positive definite M
        fb = solve_fb_newton(p, 1.0)
        lk = solve_lemke(p)
        assert np.allclose(fb.z, sols[0], atol=1e-7)
        assert np.allclose(lk.z, sols[0], atol=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10 ** 6), st.integers(min_value=1, max_value=10))
def test_scaling_equivariance(seed, n):
    rng = np.random.default_rng(seed)
    M, q = random_pure_lcp(rng, n)
    scale = rng.uniform(0.1, 10.0, size=n)
    p = pure_problem(M, q)
    ps = pure_problem(scale[:, None] * M, scale * q)
    rep = solve_fb_newton(p, 1.0)
    rep_s = solve_fb_newton(ps, 1.0)
    assert rep.converged and rep_s.converged
    assert np.allclose(rep.z, rep_s.z, atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10 ** 6))
def test_determinism_bitwise(seed):
    rng = np.random.default_rng(seed)
    M, q = random_pure_lcp(rng, int(rng.integers(1, 15)))
    p = pure_problem(M, q)
    a = solve_fb_newton(p, 1.0)
    b = solve_fb_newton(p, 1.0)
    assert a.status is b.status and a.iterations == b.iterations
    assert a.residual == b.residual
    assert np.array_equal(a.z, b.z)
    la = solve_lemke(p)
    lb = solve_lemke(p)
    assert np.array_equal(la.z, lb.z)


def test_validation_errors():
    metas = [VariableMeta(0, "z", 0, 0, None, Sign.NONNEGATIVE)]
    with pytest.raises(ValueError):
        MlcpProblem(sp.eye(2).tocsr(), np.zeros(2), metas)
    with pytest.raises(ValueError):
        MlcpProblem(sp.csr_matrix(np.array([[np.nan]])), np.zeros(1), metas)
    bad = [
        VariableMeta(0, "z", 0, 0, None, Sign.NONNEGATIVE),
        VariableMeta(1, "z", 0, 0, None, Sign.NONNEGATIVE),
    ]
    with pytest.raises(ValueError):
        MlcpProblem(sp.eye(2).tocsr(), np.zeros(2), bad)


def test_start_validation():
    p = pure_problem(np.eye(2), [1.0, 1.0])
    with pytest.raises(ValueError):
        solve_fb_newton(p, np.array([1.0, 2.0, 3.0]))
    with pytest.raises(ValueError):
        solve_fb_newton(p, np.array([np.inf, 0.0]))


def test_dump_problem_roundtrip(tmp_path):
    M = np.array([[2.0, -1.0], [0.0, 1.0]])
    q = np.array([0.5, -0.25])
    p = mixed_problem(M, q, "nf")
    paths = dump_problem(p, tmp_path / "dbg" / "problem")
    assert all(path.exists() for path in paths)
    back = scipy.io.mmread(str(paths[0])).toarray()
    assert np.allclose(back, M)
    qs = [float(line) for line in paths[1].read_text().split()]
    assert np.allclose(qs, q)
    text = paths[2].read_text()
    assert '"sign": "free"' in text and '"sign": "nonnegative"' in text
