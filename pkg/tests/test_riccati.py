import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from mixedlq import problems
from mixedlq.errors import (BlowUp, NoConvergence, NotPositiveDefinite, SingularLambda2,
                            TimeInvariantRequired)
from mixedlq.model import Dims, make_frame, make_problem
from mixedlq.riccati import (TimeGrid, eval_structure_maps, make_grid, solve_algebraic,
                             solve_classic, solve_p1, solve_p2, solve_pair, solve_riccati,
                             write_riccati_csv)

SQ2 = math.sqrt(2.0)


def tanh_oracle(t, T=1.0):
    return math.tanh(SQ2 * (T - t)) / SQ2


# ------------------------------------------------------------ structure maps

def random_frame(seed, n=2, l1=1, l2=1, d=2):
    rng = np.random.default_rng(seed)
    fr = make_frame(Dims(n, l1, l2, d), A=rng.normal(size=(n, n)), B1=rng.normal(size=(n, l1)),
                    B2=rng.normal(size=(n, l2)), C=rng.normal(size=(d, n, n)),
                    D1=rng.normal(size=(d, n, l1)), D2=rng.normal(size=(d, n, l2)),
                    Q=np.eye(n), R1=np.eye(l1), R2=np.eye(l2))
    M = rng.normal(size=(n, n))
    return fr, M @ M.T


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_structure_maps_match_transcription(seed):
    fr, S = random_frame(seed)
    P2 = S + np.eye(2)
    got = eval_structure_maps(S, fr, P2)
    want = oracles.maps(S, fr, P2)
    for k in ("Lambda1", "Lambda2", "LambdaHat", "Qtilde", "Atilde", "Nmap", "Theta1", "Theta2"):
        np.testing.assert_allclose(getattr(got, k), want[k], rtol=0, atol=1e-12 * (1 + np.abs(want[k]).max()))
    # U lives on the lifted space; compare its contraction with C
    C = np.concatenate(list(fr.C))
    np.testing.assert_allclose(C.T @ got.U @ C, want["CUC"], atol=1e-11)


def test_zero_s_collapse():
    fr, _ = random_frame(3)
    m = eval_structure_maps(np.zeros((2, 2)), fr)
    np.testing.assert_allclose(m.Lambda2, fr.R2)
    np.testing.assert_allclose(m.LambdaHat, fr.R1)
    assert not m.U.any()
    np.testing.assert_allclose(m.Qtilde, fr.Q)
    np.testing.assert_allclose(m.Atilde, fr.A)
    N = fr.B2 @ np.linalg.inv(fr.R2) @ fr.B2.T + fr.B1 @ np.linalg.inv(fr.R1) @ fr.B1.T
    np.testing.assert_allclose(m.Nmap, N, atol=1e-14)


def test_no_control_noise_collapse():
    fr, S = random_frame(4)
    fr = make_frame(Dims(2, 1, 1, 2), A=fr.A, B1=fr.B1, B2=fr.B2, C=fr.C, Q=fr.Q, R1=1, R2=1)
    m = eval_structure_maps(S, fr)
    np.testing.assert_allclose(m.U, np.kron(np.eye(2), S), atol=1e-14)
    CSC = sum(fr.C[j].T @ S @ fr.C[j] for j in range(2))
    np.testing.assert_allclose(m.Qtilde, fr.Q + CSC, atol=1e-12)
    np.testing.assert_allclose(m.Atilde, fr.A, atol=1e-14)
    np.testing.assert_allclose(m.Nmap, fr.B1 @ fr.B1.T + fr.B2 @ fr.B2.T, atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_maps_symmetric_and_nonnegative(seed):
    fr, S = random_frame(seed, n=3, l1=2, l2=1, d=2)
    m = eval_structure_maps(S, fr)
    for k in ("Lambda1", "Lambda2", "LambdaHat", "U", "Qtilde", "Nmap"):
        M = getattr(m, k)
        assert np.array_equal(M, M.T), k
    for k in ("U", "Qtilde"):
        M = getattr(m, k)
        assert np.linalg.eigvalsh(M).min() >= -1e-9 * (1 + np.abs(M).max())
    assert np.linalg.eigvalsh(m.Lambda2).min() > 0
    assert np.linalg.eigvalsh(m.LambdaHat).min() > 0


def test_singular_lambda2_raises():
    fr = make_frame(Dims(1, 1, 1, 1), B1=1, B2=1, R1=1, R2=0)
    with pytest.raises(SingularLambda2):
        eval_structure_maps(np.zeros((1, 1)), fr, time=0.25)


# ------------------------------------------------------------------ oracles

def test_scalar_riccati_oracle():
    spec = problems.scalar_riccati_oracle()
    sol = solve_riccati(spec, 512)
    t = sol.grid.times
    np.testing.assert_allclose(sol.P1[:, 0, 0], 1.0 / (1.0 + (1.0 - t)), atol=1e-10)
    assert abs(sol.P1[0, 0, 0] - 0.5) <= 1e-8


def test_lyapunov_oracle():
    spec = problems.scalar_lyapunov()
    sol = solve_riccati(spec, 64)
    np.testing.assert_allclose(sol.P1[:, 0, 0], 1.0 - sol.grid.times, atol=1e-13)


def test_tanh_oracle():
    spec = problems.tanh_problem()
    sol = solve_riccati(spec, 512)
    want = np.array([tanh_oracle(t) for t in sol.grid.times])
    np.testing.assert_allclose(sol.P2[:, 0, 0], want, atol=1e-10)
    np.testing.assert_allclose(sol.Kclassic[:, 0, 0], want, atol=1e-10)
    assert abs(sol.P2[0, 0, 0] - 0.6281834549) < 1e-9
    np.testing.assert_allclose(sol.P1[0, 0, 0], math.tanh(1.0), atol=1e-10)


def test_independent_scalar_rk4():
    # same scheme written out by hand for the scalar P1 equation of a noisy problem
    spec = problems.singular_r1()
    a, b2, c, d2, q, r2 = 0.2, 1.0, 0.3, 0.2, 1.0, 1.0
    f = lambda p: -(2 * a * p + c * c * p + q - (p * b2 + c * p * d2) ** 2 / (r2 + d2 * p * d2))
    want = oracles.rk4_scalar_riccati(f, 1.0, 1.0, 128)
    got = solve_riccati(spec, 128, classic=False).P1[:, 0, 0]
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-13)


@pytest.mark.parametrize("seed", [100, 101, 102])
def test_reduction_without_deterministic_control(seed):
    spec = problems.random_problem(seed, n=2, l1=0, l2=1, d=2)
    sol = solve_riccati(spec, 256)
    assert np.abs(sol.P2 - sol.P1).max() <= 1e-8
    assert np.abs(sol.Kclassic - sol.P1).max() <= 1e-8


# -------------------------------------------------------------- invariants

@pytest.mark.parametrize("name", ["regular_2x2", "singular_r2", "singular_r1", "tanh"])
def test_solution_invariants(name):
    spec = problems.REFERENCE[name]()
    sol = solve_riccati(spec, 256)
    for P in (sol.P1, sol.P2, sol.Kclassic):
        assert np.array_equal(P[-1], spec.G)
        assert np.array_equal(P, P.transpose(0, 2, 1))
        assert np.linalg.eigvalsh(P).min() >= -1e-8
    # the fully adapted benchmark can only do better
    assert np.linalg.eigvalsh(sol.P2 - sol.Kclassic).min() >= -1e-8


def test_singular_r2_p1_positive():
    sol = solve_riccati(problems.singular_r2(), 256)
    assert np.linalg.eigvalsh(sol.P1).min() > 0


@pytest.mark.parametrize("name", ["regular_2x2", "singular_r2", "tanh"])
def test_rk4_refinement(name):
    spec = problems.REFERENCE[name]()
    ref = solve_riccati(spec, 1024, classic=False)
    coarse = solve_riccati(spec, 32, classic=False)
    fine = solve_riccati(spec, 64, classic=False)
    for k in ("P1", "P2"):
        e1 = np.abs(getattr(coarse, k)[0] - getattr(ref, k)[0]).max()
        e2 = np.abs(getattr(fine, k)[0] - getattr(ref, k)[0]).max()
        assert e1 / e2 >= 8.0


def test_pair_matches_separate_solvers(reg2):
    grid = make_grid(reg2, 256)
    P1, P2 = solve_pair(reg2, grid)
    np.testing.assert_array_equal(P1, solve_p1(reg2, grid))
    np.testing.assert_allclose(solve_p2(reg2, grid, P1), P2, atol=1e-9)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.1, 10.0))
def test_cost_scaling_covariance(c):
    base = problems.regular_2x2()
    fr = base.frames[0]
    scaled = make_problem(base.dims, T=1.0, G=c * base.G, x0=base.x0, A=fr.A, B1=fr.B1,
                          B2=fr.B2, C=fr.C, D1=fr.D1, D2=fr.D2, Q=c * fr.Q, R1=c * fr.R1,
                          R2=c * fr.R2)
    a = solve_riccati(base, 64)
    b = solve_riccati(scaled, 64)
    for k in ("P1", "P2", "Kclassic"):
        np.testing.assert_allclose(getattr(b, k), c * getattr(a, k), rtol=1e-10, atol=1e-12)


def test_grid_aligns_breakpoints():
    spec = make_problem(Dims(1, 1, 1, 1), T=1.0, G=0, x0=[1.0], breakpoints=[0, 1 / 3, 1],
                        frames=[dict(B1=1, B2=1, Q=1, R1=1, R2=1),
                                dict(A=1, B1=1, B2=1, Q=1, R1=1, R2=1)])
    grid = make_grid(spec, 64)
    assert grid.steps % 3 == 0 and grid.steps >= 64
    assert np.isclose(grid.times[grid.steps // 3], 1 / 3)
    assert grid.times[-1] == 1.0


def test_blowup_reports_time():
    spec = make_problem(Dims(1, 1, 1, 1), T=1.0, A=20, B1=1, B2=0, Q=1, R1=1, R2=1, G=0,
                        x0=[1.0])
    with pytest.raises(BlowUp) as exc:
        solve_riccati(spec, 256, classic=False)
    assert exc.value.time is not None and "t=" in str(exc.value)


def test_classic_separately():
    spec = problems.tanh_problem()
    grid = TimeGrid(128, 1.0)
    K = solve_classic(spec, grid)
    assert abs(K[0, 0, 0] - tanh_oracle(0.0)) < 1e-9


def test_csv_round_trip(tmp_path, tanh):
    sol = solve_riccati(tanh, 16)
    path = tmp_path / "r.csv"
    write_riccati_csv(sol, path)
    rows = path.read_text().splitlines()
    assert rows[0] == "t,P1_00,P2_00,K_00"
    vals = [float(v) for v in rows[1].split(",")]
    assert vals[2] == sol.P2[0, 0, 0]  # 17 digits round-trip exactly


# --------------------------------------------------------------------- ARE

def test_are_scalar():
    res = solve_algebraic(problems.are_scalar())
    assert abs(res.P1inf[0, 0] - 1.0) <= 1e-6
    assert abs(res.P2inf[0, 0] - 1 / SQ2) <= 1e-6
    assert res.residual1 <= 1e-5 and res.residual2 <= 1e-5
    assert res.monotone and res.monotone_margin >= -1e-10
    tr = [np.trace(P) for P in res.trace_P2]
    assert all(b >= a - 1e-10 for a, b in zip(tr, tr[1:]))


def test_are_without_deterministic_control():
    res = solve_algebraic(problems.are_scalar(with_deterministic=False))
    assert abs(res.P1inf[0, 0] - 1.0) <= 1e-6 and abs(res.P2inf[0, 0] - 1.0) <= 1e-6


def test_are_unstabilizable():
    with pytest.raises(NoConvergence) as exc:
        solve_algebraic(problems.unstabilizable_scalar(), t_max=50.0)
    assert "stabiliz" in str(exc.value)


def test_are_requires_time_invariance():
    spec = make_problem(Dims(1, 1, 1, 1), T=1.0, G=0, x0=[1.0], breakpoints=[0, 0.5, 1],
                        frames=[dict(B1=1, B2=1, Q=1, R1=1, R2=1),
                                dict(A=1, B1=1, B2=1, Q=1, R1=1, R2=1)])
    with pytest.raises(TimeInvariantRequired, match="time-invariant required"):
        solve_algebraic(spec)


def test_are_requires_positive_q():
    spec = make_problem(Dims(1, 1, 1, 1), T=1.0, B1=1, B2=1, Q=0, R1=1, R2=1, G=0, x0=[1.0])
    with pytest.raises(NotPositiveDefinite):
        solve_algebraic(spec)


def test_are_matrix_problem():
    spec = problems.random_problem(3, n=2, l1=1, l2=1, d=1, scale=0.2)  # stabilizable draw
    res = solve_algebraic(spec)
    assert np.linalg.eigvalsh(res.P1inf).min() > 0 and np.linalg.eigvalsh(res.P2inf).min() > 0
    assert res.residual1 <= 1e-7 and res.residual2 <= 1e-7
