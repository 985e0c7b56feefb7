"""Optimal feedback gains and the closed-loop mean-field system.

The optimal controls are

    u1 = M1 Xbar,    u2 = M2 (X - Xbar) + M3 Xbar,

with ``Xbar`` the deterministic mean state.  Gains are formed at every grid
node from ``(P1, P2)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, MixedLQError, RepresentationMismatch, SingularLambda2, SingularLambdaHat
from .linalg import chol_solve, lift, stack_noise, sym
from .model import CoefficientFrame, ProblemSpec
from .riccati import RiccatiSolution, TimeGrid, step_frames

REPR_TOL = 1e-9
IDENTITY_TOL = 1e-12


def _alternate_gains(P1, P2, fr: CoefficientFrame, C, D1, D2):
    """Gains via the LambdaHat / U representation, using LU solves."""
    d = fr.C.shape[0]
    Pb = lift(P1, d)
    lam2 = fr.R2 + D2.T @ Pb @ D2
    X12 = D1.T @ Pb @ D2
    inv2 = np.linalg.inv(lam2) if lam2.size else lam2
    U = Pb - Pb @ D2 @ inv2 @ D2.T @ Pb
    lamhat = fr.R1 + D1.T @ U @ D1
    bracket = fr.B1.T @ P2 + D1.T @ U @ C - X12 @ inv2 @ fr.B2.T @ P2
    M1 = -np.linalg.solve(lamhat, bracket) if lamhat.size else np.zeros((0, P1.shape[0]))
    inner = fr.B2.T @ P2 + D2.T @ Pb @ C
    if lamhat.size:
        inner = inner - X12.T @ np.linalg.solve(lamhat, bracket)
    M3 = -np.linalg.solve(lam2, inner) if lam2.size else np.zeros((0, P1.shape[0]))
    return M1, M3


def gains_at(P1, P2, frame: CoefficientFrame, *, time=None, check=True):
    """Optimal gains ``(M1, M2, M3)`` for value matrices ``P1``, ``P2``.

    The primary formulas eliminate ``u2`` first (Cholesky of ``Lambda2``),
    then solve the reduced deterministic condition with ``LambdaHat``.  With
    ``check`` on, ``M1`` and ``M3`` are recomputed from the equivalent
    ``U``-based representation and must agree to ``1e-9``.
    """
    P1 = sym(np.asarray(P1, dtype=float))
    P2 = sym(np.asarray(P2, dtype=float))
    d = frame.C.shape[0]
    C, D1, D2 = stack_noise(frame.C), stack_noise(frame.D1), stack_noise(frame.D2)
    Pb = lift(P1, d)
    PC, PD1, PD2 = Pb @ C, Pb @ D1, Pb @ D2
    lam1 = frame.R1 + D1.T @ PD1
    lam2 = frame.R2 + D2.T @ PD2
    theta1 = frame.B2.T @ P1 + D2.T @ PC
    theta2 = frame.B2.T @ P2 + D2.T @ PC
    X12 = D1.T @ PD2
    n, l1 = P1.shape[0], frame.B1.shape[1]
    sol = chol_solve(lam2, np.hstack([theta1, theta2, X12.T]), SingularLambda2,
                     time=time, what="Lambda2(P1)")
    i2t1, i2t2, i2X = sol[:, :n], sol[:, n:2 * n], sol[:, 2 * n:]
    lamhat = lam1 - X12 @ i2X
    M1 = -chol_solve(lamhat, frame.B1.T @ P2 + D1.T @ PC - X12 @ i2t2, SingularLambdaHat,
                     time=time, what="LambdaHat(P1)")
    M2 = -i2t1
    M3 = -(i2t2 + i2X @ M1)
    if check:
        A1, A3 = _alternate_gains(P1, P2, frame, C, D1, D2)
        scale = 1.0 + max(np.max(np.abs(M1), initial=0.0), np.max(np.abs(M3), initial=0.0))
        err = max(np.max(np.abs(M1 - A1), initial=0.0), np.max(np.abs(M3 - A3), initial=0.0))
        if err > REPR_TOL * scale:
            raise RepresentationMismatch(f"gain representations differ by {err:.3e}", time=time)
    return M1, M2, M3


@dataclass(frozen=True, eq=False)
class GainSchedule:
    grid: TimeGrid
    M1: np.ndarray  # (N+1, l1, n)
    M2: np.ndarray  # (N+1, l2, n)
    M3: np.ndarray  # (N+1, l2, n)

    def scaled(self, factor):
        return GainSchedule(self.grid, self.M1 * factor, self.M2 * factor, self.M3 * factor)

    def to_dict(self):
        return {
            "steps": self.grid.steps,
            "T": self.grid.T,
            "M1": self.M1.tolist(),
            "M2": self.M2.tolist(),
            "M3": self.M3.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        M1, M2, M3 = (np.array(doc[k], dtype=float) for k in ("M1", "M2", "M3"))
        grid = TimeGrid(int(doc["steps"]), float(doc["T"]))
        for name, M in (("M1", M1), ("M2", M2), ("M3", M3)):
            if M.ndim != 3 or M.shape[0] != grid.steps + 1:
                raise GridMismatch(f"{name} must have shape (steps+1, rows, n), got {M.shape}")
        return cls(grid, M1, M2, M3)


def build_gain_schedule(spec: ProblemSpec, grid: TimeGrid, riccati: RiccatiSolution) -> GainSchedule:
    if riccati.grid != grid:
        raise GridMismatch("Riccati solution was computed on a different grid")
    frames = step_frames(spec, grid)
    frames.append(frames[-1])
    times = grid.times
    n, l1, l2 = spec.dims.n, spec.dims.l1, spec.dims.l2
    M1 = np.empty((grid.steps + 1, l1, n))
    M2 = np.empty((grid.steps + 1, l2, n))
    M3 = np.empty((grid.steps + 1, l2, n))
    for i, fr in enumerate(frames):
        try:
            M1[i], M2[i], M3[i] = gains_at(riccati.P1[i], riccati.P2[i], fr, time=times[i])
        except MixedLQError as exc:
            if getattr(exc, "time", None) is None:
                exc.time = times[i]
            raise
    return GainSchedule(grid, M1, M2, M3)


def write_gains_csv(gains: GainSchedule, path) -> None:
    def cols(prefix, M):
        return [f"{prefix}_{i}{j}" for i in range(M.shape[1]) for j in range(M.shape[2])]

    header = ["t"] + cols("M1", gains.M1) + cols("M2", gains.M2) + cols("M3", gains.M3)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, t in enumerate(gains.grid.times):
            row = [t, *gains.M1[i].ravel(), *gains.M2[i].ravel(), *gains.M3[i].ravel()]
            w.writerow([f"{v:.17g}" for v in row])


@dataclass(frozen=True, eq=False)
class ClosedLoopSystem:
    grid: TimeGrid
    drift_state: np.ndarray      # (N+1, n, n)   A + B2 M2
    drift_mean: np.ndarray       # (N+1, n, n)   B1 M1 - B2 M2 + B2 M3
    diff_state: np.ndarray       # (N+1, d, n, n) C_j + D2_j M2
    diff_mean: np.ndarray        # (N+1, d, n, n) D1_j M1 - D2_j M2 + D2_j M3
    mean_generator: np.ndarray   # (N+1, n, n)   A + B1 M1 + B2 M3


def build_closed_loop(spec: ProblemSpec, gains: GainSchedule) -> ClosedLoopSystem:
    """Assemble the mean-field closed-loop coefficients node by node.

    Node ``i`` uses the frame of step ``[t_i, t_{i+1})`` (the last node
    reuses the final step's frame).
    """
    frames = step_frames(spec, gains.grid)
    frames.append(frames[-1])
    N1 = gains.grid.steps + 1
    n, d = spec.dims.n, spec.dims.d
    ds = np.empty((N1, n, n))
    dm = np.empty((N1, n, n))
    xs = np.empty((N1, d, n, n))
    xm = np.empty((N1, d, n, n))
    mg = np.empty((N1, n, n))
    for i, fr in enumerate(frames):
        M1, M2, M3 = gains.M1[i], gains.M2[i], gains.M3[i]
        ds[i] = fr.A + fr.B2 @ M2
        dm[i] = fr.B1 @ M1 - fr.B2 @ M2 + fr.B2 @ M3
        xs[i] = fr.C + fr.D2 @ M2
        xm[i] = fr.D1 @ M1 - fr.D2 @ M2 + fr.D2 @ M3
        mg[i] = fr.A + fr.B1 @ M1 + fr.B2 @ M3
    err = np.max(np.abs(mg - ds - dm))
    scale = 1.0 + np.max(np.abs(mg))
    if err > IDENTITY_TOL * scale:
        raise RepresentationMismatch(f"mean generator identity violated by {err:.3e}")
    return ClosedLoopSystem(gains.grid, ds, dm, xs, xm, mg)


def perturb_gains(gains: GainSchedule, rng: np.random.Generator, rel: float = 0.25) -> GainSchedule:
    """Add a random constant direction to each gain, sized ``rel`` times its norm.

    For every gain family one standard normal matrix ``E`` is drawn and
    ``M(t) + rel * |M(t)|_F * E / |E|_F`` is returned node by node.
    """
    out = []
    for M in (gains.M1, gains.M2, gains.M3):
        if M.size == 0:
            out.append(M.copy())
            continue
        E = rng.standard_normal(M.shape[1:])
        E /= np.linalg.norm(E)
        norms = np.linalg.norm(M, axis=(1, 2))[:, None, None]
        out.append(M + rel * norms * E[None])
    return GainSchedule(gains.grid, *out)
