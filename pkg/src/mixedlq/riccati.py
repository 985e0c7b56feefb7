"""Structure maps and the matrix Riccati solvers.

Two decoupled backward equations characterize the mixed problem:

* ``P1`` solves the standard stochastic Riccati equation driven by the
  random control only;
* ``P2`` solves a second Riccati equation whose coefficients
  ``Atilde(P1)``, ``Qtilde(P1)``, ``N(P1)`` depend on ``P1``.

``solve_classic`` integrates the fully adapted benchmark ``K`` (both controls
adapted) and ``solve_algebraic`` finds the stationary pair by extending the
horizon until the finite-horizon values at time zero settle.

All integrators are fixed-step classical RK4 run backwards from ``T``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BlowUp,
    GridMismatch,
    InputError,
    NoConvergence,
    NotPositive,
    NotPositiveDefinite,
    SingularLambda,
    SingularLambda2,
    SingularLambdaHat,
    TimeInvariantRequired,
)
from .linalg import chol_solve, fro, lift, min_eig, stack_noise, sym
from .model import CoefficientFrame, ProblemSpec, Regularity, validate

BLOWUP = 1e12
NONNEG_TOL = 1e-8


# ------------------------------------------------------------------- grid


@dataclass(frozen=True)
class TimeGrid:
    steps: int
    T: float

    @property
    def dt(self):
        return self.T / self.steps

    @property
    def times(self):
        t = np.arange(self.steps + 1) * self.T / self.steps
        t[-1] = self.T
        return t

    def __len__(self):
        return self.steps + 1


def _breakpoint_nodes(breakpoints, T, N, tol=1e-9):
    x = np.asarray(breakpoints) * N / T
    k = np.rint(x)
    return k.astype(int), bool(np.all(np.abs(x - k) <= tol * max(1.0, N)))


def make_grid(spec: ProblemSpec, steps: int, max_factor: int = 1000) -> TimeGrid:
    """Uniform grid with at least ``steps`` intervals and every breakpoint on a node."""
    if steps < 1:
        raise InputError("steps must be >= 1")
    for N in range(steps, steps * max_factor + 1):
        if _breakpoint_nodes(spec.breakpoints, spec.horizon, N)[1]:
            return TimeGrid(N, spec.horizon)
    raise InputError("breakpoints cannot be aligned with a uniform grid")


def step_frames(spec: ProblemSpec, grid: TimeGrid) -> list[CoefficientFrame]:
    """The frame in force on each step ``[t_i, t_{i+1})``."""
    if not math.isclose(grid.T, spec.horizon, rel_tol=0, abs_tol=1e-12 * spec.horizon):
        raise GridMismatch(f"grid horizon {grid.T} != problem horizon {spec.horizon}")
    nodes, ok = _breakpoint_nodes(spec.breakpoints, spec.horizon, grid.steps)
    if not ok:
        raise GridMismatch(f"breakpoints are not nodes of the {grid.steps}-step grid")
    out = []
    for k, fr in enumerate(spec.frames):
        out.extend([fr] * int(nodes[k + 1] - nodes[k]))
    return out


# ---------------------------------------------------------- structure maps


class _Lifted:
    """Frame coefficients with the noise index folded into the row dimension."""

    __slots__ = ("fr", "d", "C", "D1", "D2")

    def __init__(self, fr: CoefficientFrame):
        self.fr = fr
        self.d = fr.C.shape[0]
        self.C = stack_noise(fr.C)
        self.D1 = stack_noise(fr.D1)
        self.D2 = stack_noise(fr.D2)


def _lifted(frames):
    cache = {}
    out = []
    for fr in frames:
        key = id(fr)
        if key not in cache:
            cache[key] = _Lifted(fr)
        out.append(cache[key])
    return out


@dataclass(frozen=True, eq=False)
class StructureMaps:
    """Derived matrices of one value matrix ``S`` on one frame.

    ``U`` lives on the noise-lifted space: it is ``(n*d, n*d)`` with blocks
    ``U_jk = S delta_jk - S D2_j Lambda2^{-1} D2_k' S``; for a single noise
    it is the usual ``n x n`` matrix.
    """

    Lambda1: np.ndarray
    Lambda2: np.ndarray
    LambdaHat: np.ndarray
    U: np.ndarray
    Qtilde: np.ndarray
    Atilde: np.ndarray
    Nmap: np.ndarray
    Theta1: np.ndarray
    Theta2: np.ndarray


def _maps(S, L: _Lifted, P2=None, *, time=None):
    fr = L.fr
    Sb = lift(S, L.d)
    SC = Sb @ L.C
    SD1 = Sb @ L.D1
    SD2 = Sb @ L.D2
    lam1 = sym(fr.R1 + L.D1.T @ SD1)
    lam2 = sym(fr.R2 + L.D2.T @ SD2)
    # Lambda2^{-1} applied to [D2'S C | D2'S D1 | B2' | D2'S]
    rhs = np.hstack([L.D2.T @ SC, L.D2.T @ SD1, fr.B2.T, SD2.T])
    sol = chol_solve(lam2, rhs, SingularLambda2, time=time, what="Lambda2")
    n, l1 = fr.A.shape[0], fr.B1.shape[1]
    i2C = sol[:, :n]
    i2D1 = sol[:, n:n + l1]
    i2B2 = sol[:, n + l1:n + l1 + fr.B2.shape[0]]
    i2D2S = sol[:, n + l1 + fr.B2.shape[0]:]
    lamhat = sym(lam1 - L.D1.T @ SD2 @ i2D1)
    U = sym(Sb - SD2 @ i2D2S)
    UC = U @ L.C
    W = fr.B1 - fr.B2 @ i2D1
    rhs_hat = np.hstack([L.D1.T @ UC, W.T])
    solh = chol_solve(lamhat, rhs_hat, SingularLambdaHat, time=time, what="LambdaHat")
    ihUC = solh[:, :n]
    ihW = solh[:, n:]
    Qt = sym(fr.Q + L.C.T @ UC - UC.T @ L.D1 @ ihUC)
    At = fr.A - fr.B2 @ i2C - W @ ihUC
    Nm = sym(fr.B2 @ i2B2 + W @ ihW)
    theta1 = fr.B2.T @ S + SD2.T @ L.C
    theta2 = theta1 if P2 is None else fr.B2.T @ P2 + SD2.T @ L.C
    return StructureMaps(lam1, lam2, lamhat, U, Qt, At, Nm, theta1, theta2)


def eval_structure_maps(S, frame: CoefficientFrame, P2=None, *, time=None) -> StructureMaps:
    """Evaluate Lambda1, Lambda2, LambdaHat, U, Qtilde, Atilde, N, Theta1, Theta2.

    ``S`` occupies every value slot; ``P2`` (default ``S``) replaces it only
    in the drift part of ``Theta2 = B2' P2 + D2' S C``.
    """
    S = sym(np.asarray(S, dtype=float))
    return _maps(S, _Lifted(frame), None if P2 is None else np.asarray(P2, float), time=time)


# ---------------------------------------------------------- right-hand sides


def _rhs_p1(P, L: _Lifted, time=None):
    fr = L.fr
    Pb = lift(P, L.d)
    SD2 = Pb @ L.D2
    lam2 = fr.R2 + L.D2.T @ SD2
    H = P @ fr.B2 + L.C.T @ SD2
    G = chol_solve(lam2, H.T, SingularLambda2, time=time, what="Lambda2(P1)")
    val = P @ fr.A + fr.A.T @ P + L.C.T @ Pb @ L.C + fr.Q - H @ G
    return -sym(val)


def _rhs_p2(P2, P1, L: _Lifted, time=None):
    m = _maps(P1, L, time=time)
    val = P2 @ m.Atilde + m.Atilde.T @ P2 + m.Qtilde - P2 @ m.Nmap @ P2
    return -sym(val)


def _rhs_classic(K, L: _Lifted, time=None):
    fr = L.fr
    Kb = lift(K, L.d)
    D = np.hstack([L.D1, L.D2])
    B = np.hstack([fr.B1, fr.B2])
    R = np.zeros((D.shape[1],) * 2)
    l1 = fr.B1.shape[1]
    R[:l1, :l1] = fr.R1
    R[l1:, l1:] = fr.R2
    KD = Kb @ D
    lam = R + D.T @ KD
    H = K @ B + L.C.T @ KD
    G = chol_solve(lam, H.T, SingularLambda, time=time, what="R + D'KD")
    val = fr.A.T @ K + K @ fr.A + L.C.T @ Kb @ L.C + fr.Q - H @ G
    return -sym(val)


def _check(P, t, what):
    if not np.all(np.isfinite(P)) or fro(P) > BLOWUP:
        raise BlowUp(f"{what} exceeded {BLOWUP:g} in Frobenius norm", time=t)


def _rk4_backward(rhs, y, h, t, what):
    k1 = rhs(y, 0)
    k2 = rhs(sym(y - 0.5 * h * k1), 1)
    k3 = rhs(sym(y - 0.5 * h * k2), 1)
    k4 = rhs(sym(y - h * k3), 2)
    out = sym(y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
    _check(out, t, what)
    return out


# ------------------------------------------------------------- solvers


def _terminal(spec, terminal):
    return np.array(spec.G if terminal is None else terminal, dtype=float)


def solve_p1(spec: ProblemSpec, grid: TimeGrid, *, terminal=None, regularity=None):
    """Backward RK4 for ``P1`` from ``P1(T) = G``.

    Returns an array of shape ``(N+1, n, n)`` indexed by grid node.  In the
    ``SingularR2`` class ``P1`` is required to stay positive definite at every
    node (``Lambda2(P1)`` is invertible only then).
    """
    regularity = regularity or validate(spec)
    frames = _lifted(step_frames(spec, grid))
    times = grid.times
    h = grid.dt
    out = np.empty((grid.steps + 1, spec.dims.n, spec.dims.n))
    out[-1] = sym(_terminal(spec, terminal))
    strict = regularity.tag is Regularity.SINGULAR_R2
    for i in range(grid.steps - 1, -1, -1):
        L = frames[i]
        ts = (times[i + 1], times[i + 1] - 0.5 * h, times[i])
        out[i] = _rk4_backward(lambda y, s: _rhs_p1(y, L, ts[s]), out[i + 1], h, times[i], "P1")
        if strict and min_eig(out[i]) <= 0.0:
            raise NotPositive("P1 lost positive definiteness", time=times[i])
    return out


def _hermite_mid(y0, y1, m0, m1, h):
    return sym(0.5 * (y0 + y1) + 0.125 * h * (m0 - m1))


def solve_p2(spec: ProblemSpec, grid: TimeGrid, P1, *, terminal=None):
    """Backward RK4 for ``P2`` given the ``P1`` trajectory on the same grid.

    Midpoint RK4 stages need ``P1`` between nodes; it is reconstructed by
    cubic Hermite interpolation using the ``P1`` equation for the slopes, so
    the scheme keeps fourth order.
    """
    frames = _lifted(step_frames(spec, grid))
    P1 = np.asarray(P1)
    if P1.shape != (grid.steps + 1, spec.dims.n, spec.dims.n):
        raise GridMismatch(f"P1 trajectory shape {P1.shape} does not match the grid")
    times = grid.times
    h = grid.dt
    out = np.empty_like(P1)
    out[-1] = sym(_terminal(spec, terminal))
    for i in range(grid.steps - 1, -1, -1):
        L = frames[i]
        m0 = _rhs_p1(P1[i], L, times[i])
        m1 = _rhs_p1(P1[i + 1], L, times[i + 1])
        stages = (P1[i + 1], _hermite_mid(P1[i], P1[i + 1], m0, m1, h), P1[i])
        ts = (times[i + 1], times[i + 1] - 0.5 * h, times[i])

        def rhs(y, s, L=L, stages=stages, ts=ts):
            return _rhs_p2(y, stages[s], L, ts[s])

        out[i] = _rk4_backward(rhs, out[i + 1], h, times[i], "P2")
    return out


def solve_pair(spec: ProblemSpec, grid: TimeGrid, *, terminal1=None, terminal2=None,
               regularity=None):
    """Backward RK4 on the coupled system ``(P1, P2)``.

    Each stage of ``P2`` sees the matching stage of ``P1``, so when the two
    equations coincide (no deterministic control) the trajectories agree to
    round-off.  Returns ``(P1, P2)``, each ``(N+1, n, n)``.
    """
    regularity = regularity or validate(spec)
    frames = _lifted(step_frames(spec, grid))
    times = grid.times
    h = grid.dt
    n = spec.dims.n
    P1 = np.empty((grid.steps + 1, n, n))
    P2 = np.empty_like(P1)
    P1[-1] = sym(_terminal(spec, terminal1))
    P2[-1] = sym(_terminal(spec, terminal2))
    strict = regularity.tag is Regularity.SINGULAR_R2
    for i in range(grid.steps - 1, -1, -1):
        L = frames[i]
        ts = (times[i + 1], times[i + 1] - 0.5 * h, times[i + 1] - 0.5 * h, times[i])
        y1, y2 = P1[i + 1], P2[i + 1]
        k = []
        a1, a2 = y1, y2
        for s, c in enumerate((0.5, 0.5, 1.0, None)):
            k1 = _rhs_p1(a1, L, ts[s])
            k2 = _rhs_p2(a2, a1, L, ts[s])
            k.append((k1, k2))
            if c is not None:
                a1, a2 = sym(y1 - c * h * k1), sym(y2 - c * h * k2)
        w = (1.0, 2.0, 2.0, 1.0)
        P1[i] = sym(y1 - (h / 6.0) * sum(wi * ki[0] for wi, ki in zip(w, k)))
        P2[i] = sym(y2 - (h / 6.0) * sum(wi * ki[1] for wi, ki in zip(w, k)))
        _check(P1[i], times[i], "P1")
        _check(P2[i], times[i], "P2")
        if strict and min_eig(P1[i]) <= 0.0:
            raise NotPositive("P1 lost positive definiteness", time=times[i])
    return P1, P2


def solve_classic(spec: ProblemSpec, grid: TimeGrid, *, terminal=None):
    """Backward RK4 for the fully adapted Riccati equation ``K``.

    Uses the standard backward sign convention ``K' + (...) = 0``.
    """
    frames = _lifted(step_frames(spec, grid))
    times = grid.times
    h = grid.dt
    out = np.empty((grid.steps + 1, spec.dims.n, spec.dims.n))
    out[-1] = sym(_terminal(spec, terminal))
    for i in range(grid.steps - 1, -1, -1):
        L = frames[i]
        ts = (times[i + 1], times[i + 1] - 0.5 * h, times[i])
        out[i] = _rk4_backward(lambda y, s: _rhs_classic(y, L, ts[s]), out[i + 1], h,
                               times[i], "K")
    return out


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    grid: TimeGrid
    P1: np.ndarray
    P2: np.ndarray
    Kclassic: np.ndarray | None = None

    def value(self, x0):
        """Optimal cost ``0.5 <P2(0) x0, x0>``."""
        x0 = np.asarray(x0, dtype=float)
        return 0.5 * float(x0 @ self.P2[0] @ x0)

    def classic_value(self, x0):
        if self.Kclassic is None:
            return None
        x0 = np.asarray(x0, dtype=float)
        return 0.5 * float(x0 @ self.Kclassic[0] @ x0)


def solve_riccati(spec: ProblemSpec, steps: int = 512, *, classic: bool = True,
                  grid: TimeGrid | None = None) -> RiccatiSolution:
    """Validate ``spec`` and solve for ``P1``, ``P2`` (and ``K``) on one grid."""
    regularity = validate(spec)
    grid = grid or make_grid(spec, steps)
    P1, P2 = solve_pair(spec, grid, regularity=regularity)
    K = solve_classic(spec, grid) if classic else None
    return RiccatiSolution(grid, P1, P2, K)


def write_riccati_csv(sol: RiccatiSolution, path) -> None:
    n = sol.P1.shape[1]
    idx = [f"{i}{j}" for i in range(n) for j in range(n)]
    header = ["t"] + [f"P1_{k}" for k in idx] + [f"P2_{k}" for k in idx]
    if sol.Kclassic is not None:
        header += [f"K_{k}" for k in idx]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, t in enumerate(sol.grid.times):
            row = [t, *sol.P1[i].ravel(), *sol.P2[i].ravel()]
            if sol.Kclassic is not None:
                row += list(sol.Kclassic[i].ravel())
            w.writerow([f"{v:.17g}" for v in row])


# ----------------------------------------------------------- stationary


def are_residuals(spec: ProblemSpec, P1, P2):
    """Frobenius norms of the two algebraic Riccati residuals."""
    L = _Lifted(spec.frames[0])
    r1 = fro(_rhs_p1(P1, L))
    r2 = fro(_rhs_p2(P2, P1, L))
    return r1, r2


@dataclass(frozen=True, eq=False)
class AREResult:
    P1inf: np.ndarray
    P2inf: np.ndarray
    residual1: float
    residual2: float
    horizons_used: list[float]
    trace_P2: list[np.ndarray] = field(repr=False, default_factory=list)
    monotone: bool = True
    monotone_margin: float = 0.0


def solve_algebraic(spec: ProblemSpec, tol: float = 1e-8, t_step: float = 5.0,
                    t_max: float = 500.0, *, dt: float = 0.01,
                    mono_tol: float = 1e-10) -> AREResult:
    """Stationary pair by horizon extension.

    Finite-horizon problems with zero terminal weight are solved on horizons
    ``t_step, 2 t_step, ...``.  Because the coefficients are constant, the
    value at time zero for horizon ``T + t_step`` is obtained by integrating
    the pair a further ``t_step`` backwards from the horizon-``T`` value, so
    each extension costs one segment.  Stops when both matrices move by less
    than ``tol`` (Frobenius) between successive horizons.
    """
    regularity = validate(spec)
    if not spec.schedule.is_time_invariant:
        raise TimeInvariantRequired("time-invariant required: schedule has more than one interval")
    fr = spec.frames[0]
    q = min_eig(fr.Q)
    if not q > 0:
        raise NotPositiveDefinite(f"Q must be positive definite (min eig {q:.3g})")
    if t_step <= 0 or t_max < t_step or tol <= 0:
        raise InputError("need tol > 0, t_step > 0 and t_max >= t_step")

    n = spec.dims.n
    steps = max(1, int(math.ceil(t_step / dt)))
    seg = spec.replace(horizon=float(t_step), G=np.zeros((n, n)),
                       schedule=type(spec.schedule)(np.array([0.0, t_step]), spec.frames))
    grid = TimeGrid(steps, float(t_step))
    P1 = np.zeros((n, n))
    P2 = np.zeros((n, n))
    horizons, trace = [], []
    margin = np.inf
    T = 0.0
    hint = "system is likely not stabilizable using only control u^2 (mean-square)"
    while T + t_step <= t_max * (1 + 1e-12):
        T += t_step
        try:
            tr1, tr2 = solve_pair(seg, grid, terminal1=P1, terminal2=P2,
                                  regularity=regularity)
        except BlowUp as exc:
            raise NoConvergence(f"horizon {T:g}: {exc}; {hint}") from None
        new1, new2 = tr1[0], tr2[0]
        horizons.append(T)
        trace.append(new2)
        if len(trace) > 1:
            margin = min(margin, min_eig(new2 - trace[-2]))
        done = fro(new1 - P1) < tol and fro(new2 - P2) < tol
        P1, P2 = new1, new2
        if done:
            break
    else:
        raise NoConvergence(f"no convergence by horizon {t_max:g}; {hint}")

    if not (min_eig(P1) > 0 and min_eig(P2) > 0):
        raise NotPositive(f"limit not positive definite (min eigs {min_eig(P1):.3g}, "
                          f"{min_eig(P2):.3g})")
    r1, r2 = are_residuals(spec, P1, P2)
    if r1 > 10 * tol or r2 > 10 * tol:
        raise NoConvergence(f"algebraic residuals {r1:.3g}, {r2:.3g} exceed {10 * tol:g}")
    margin = 0.0 if len(trace) < 2 else float(margin)
    return AREResult(P1, P2, r1, r2, horizons, trace, margin >= -mono_tol, margin)
