"""Residual checks of the optimality system on simulated ensembles.

The adjoint pair is rebuilt from the Riccati ansatz

    p = P1 (X - Xbar) + P2 Xbar,    k_j = P1 (C_j X + D1_j u1 + D2_j u2),

and then checked against

* the averaged condition for the deterministic control,
  ``E[B1' p + D1' k + R1 u1] = 0`` for a.e. t;
* the pathwise condition for the random control,
  ``B2' p + D2' k + R2 u2 = 0``;
* the backward equation ``dp = -(A' p + C' k + Q X) dt + k dW``, by
  finite differences along each path with the simulated increments.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import GridMismatch
from .linalg import min_eig
from .model import Dims, make_frame
from .riccati import RiccatiSolution, eval_structure_maps, step_frames
from .simulate import AffinePolicy, CostEstimate, TrajectoryBundle, path_costs, simulate_paths
from .synthesis import GainSchedule, perturb_gains

# Drift-check constant.  Calibrated once at N = 512, P = 20000, seed 42 under
# the optimal policy; observed defect/budget ratios at constant 1 are recorded
# in tests/fixtures/drift_calibration.json (largest 0.96).
DRIFT_CONSTANT = 2.0
R1_DT_FACTOR = 5.0
R2_DT_FACTOR = 5.0
VALUE_DT_FACTOR = 2.0
ORDER_TOL = 1e-8
SUITE_TOL = 1e-10
TERMINAL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class AdjointPath:
    grid: object
    p: np.ndarray      # (P, N+1, n)
    k: np.ndarray      # (P, N, d, n)
    slope: np.ndarray  # (N, n, n), (P1(t_{i+1}) - P1(t_i)) / dt


def _check_grid(bundle, riccati):
    if bundle.grid != riccati.grid:
        raise GridMismatch("bundle and Riccati solution use different grids")


def adjoint_reconstruct(spec, bundle: TrajectoryBundle, riccati: RiccatiSolution) -> AdjointPath:
    _check_grid(bundle, riccati)
    frames = step_frames(spec, bundle.grid)
    N = bundle.grid.steps
    X = bundle.paths
    Xbar = bundle.mean_path
    p = np.einsum("iab,pib->pia", riccati.P1, X - Xbar[None]) + (riccati.P2 @ Xbar[..., None])[None, :, :, 0]
    C = np.stack([fr.C for fr in frames])      # (N, d, n, n)
    D1 = np.stack([fr.D1 for fr in frames])    # (N, d, n, l1)
    D2 = np.stack([fr.D2 for fr in frames])    # (N, d, n, l2)
    inner = np.einsum("ijab,pib->pija", C, X[:, :N])
    inner += np.einsum("ijab,ib->ija", D1, bundle.controls1)[None]
    inner += np.einsum("ijab,pib->pija", D2, bundle.controls2)
    k = np.einsum("iab,pijb->pija", riccati.P1[:N], inner)
    slope = np.diff(riccati.P1, axis=0) / bundle.grid.dt
    return AdjointPath(bundle.grid, p, k, slope)


@dataclass
class ResidualReport:
    r1_norm: float
    r1_stderr: float
    r2_norm: float
    bsde_drift_norm: float
    bsde_drift_scale: float
    terminal_error: float
    tolerances_used: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def optimality_residuals(spec, bundle: TrajectoryBundle, adjoint: AdjointPath,
                         *, chunk: int = 2048) -> ResidualReport:
    """Monte Carlo residuals of the optimality system.

    ``r1_norm`` is the L2-in-time norm of the ensemble average of the
    deterministic-control condition and ``r1_stderr`` the same aggregate of
    its per-step standard errors.  ``r2_norm`` and ``bsde_drift_norm`` are
    root-mean-square over paths of L2-in-time norms; the drift residual is
    the one-step defect of the backward equation divided by ``dt``.

    The drift budget is ``DRIFT_CONSTANT * sqrt(dt) * (lead + sqrt(dt) * (1 +
    scale))``.  ``lead`` is the RMS size of ``P1' * sigma`` (slope of ``P1``
    times the state diffusion), whose product with the Brownian increment is
    the leading term of the one-step defect. ``scale`` is the RMS drift.
    """
    if adjoint.grid != bundle.grid:
        raise GridMismatch("adjoint and bundle use different grids")
    frames = step_frames(spec, bundle.grid)
    N, dt = bundle.grid.steps, bundle.grid.dt
    P = bundle.P
    st = {k: np.stack([getattr(fr, k) for fr in frames])
          for k in ("A", "B1", "B2", "C", "D1", "D2", "Q", "R1", "R2")}
    u1 = bundle.controls1
    s1 = np.zeros((N, spec.dims.l1))
    q1 = np.zeros((N, spec.dims.l1))
    acc = dict.fromkeys(("e2", "bsde", "drift", "lead"), 0.0)
    term = 0.0
    sq = math.sqrt(dt)
    fixed1 = np.einsum("iab,ib->ia", st["R1"], u1) if u1.size else np.zeros((N, 0))
    c1 = np.einsum("ijab,ib->ija", st["D1"], u1)
    for lo in range(0, P, chunk):
        hi = min(lo + chunk, P)
        p = adjoint.p[lo:hi]
        k = adjoint.k[lo:hi]
        X = bundle.paths[lo:hi]
        u2 = bundle.controls2[lo:hi]
        e1 = (np.einsum("iab,pia->pib", st["B1"], p[:, :N])
              + np.einsum("ijab,pija->pib", st["D1"], k) + fixed1[None])
        s1 += e1.sum(axis=0)
        q1 += (e1 * e1).sum(axis=0)
        e2 = (np.einsum("iab,pia->pib", st["B2"], p[:, :N])
              + np.einsum("ijab,pija->pib", st["D2"], k)
              + np.einsum("iab,pib->pia", st["R2"], u2))
        acc["e2"] += float(np.sum(e2 * e2))
        drift = (np.einsum("iab,pia->pib", st["A"], p[:, :N])
                 + np.einsum("ijab,pija->pib", st["C"], k)
                 + np.einsum("iab,pib->pia", st["Q"], X[:, :N]))
        dW = bundle.normals(lo, hi) * sq
        e = p[:, 1:] - p[:, :N] + drift * dt - np.einsum("pija,pij->pia", k, dW)
        acc["bsde"] += float(np.sum(e * e))
        acc["drift"] += float(np.sum(drift * drift))
        sigma = (np.einsum("ijab,pib->pija", st["C"], X[:, :N]) + c1[None]
                 + np.einsum("ijab,pib->pija", st["D2"], u2))
        lead = np.einsum("iab,pijb->pija", adjoint.slope, sigma)
        acc["lead"] += float(np.sum(lead * lead))
        GX = X[:, N] @ spec.G.T
        term = max(term, float(np.max(np.abs(p[:, N] - GX), initial=0.0)))

    avg = s1 / P
    r1 = math.sqrt(float(np.sum(avg**2)) * dt)
    if P > 1:
        var = np.maximum(q1 - P * avg**2, 0.0) / (P - 1)
        r1_se = math.sqrt(float(np.sum(var / P)) * dt)
    else:
        r1_se = 0.0
    r2 = math.sqrt(acc["e2"] * dt / P)
    drift_norm = math.sqrt(acc["bsde"] / dt / P)
    scale = math.sqrt(acc["drift"] * dt / P)
    lead = math.sqrt(acc["lead"] * dt / P)
    tol = {
        "dt": dt,
        "n_paths": P,
        "r1_bound": 3.0 * r1_se + R1_DT_FACTOR * dt,
        "r2_bound": R2_DT_FACTOR * dt,
        "bsde_lead": lead,
        "bsde_bound": DRIFT_CONSTANT * sq * (lead + sq * (1.0 + scale)),
        "terminal_bound": TERMINAL_TOL,
    }
    return ResidualReport(r1, r1_se, r2, drift_norm, scale, term, tol)


def residual_checks(report: ResidualReport) -> dict:
    t = report.tolerances_used
    return {
        "r1": report.r1_norm <= t["r1_bound"],
        "r2": report.r2_norm <= t["r2_bound"],
        "bsde_drift": report.bsde_drift_norm <= t["bsde_bound"],
        "terminal": report.terminal_error <= t["terminal_bound"],
    }


def value_identity(spec, riccati: RiccatiSolution, cost: CostEstimate) -> dict:
    """Compare the Monte Carlo cost with ``0.5 <P2(0) x0, x0>``.

    Also checks that the fully adapted value does not exceed the mixed one
    when ``K`` is available.
    """
    x0 = spec.x0
    rhs = riccati.value(x0)
    dt = riccati.grid.dt
    se = cost.mc_stderr if math.isfinite(cost.mc_stderr) else 0.0
    tol = 3.0 * se + VALUE_DT_FACTOR * dt * (1.0 + abs(rhs))
    gap = abs(cost.mc_mean - rhs)
    value = {"lhs": cost.mc_mean, "rhs": rhs, "tolerance": tol, "margin": tol - gap,
             "pass": bool(gap <= tol)}
    ordering = None
    if riccati.Kclassic is not None:
        kx = float(x0 @ riccati.Kclassic[0] @ x0)
        px = float(x0 @ riccati.P2[0] @ x0)
        ordering = {"classic": kx, "mixed": px, "margin": px + ORDER_TOL - kx,
                    "pass": bool(kx <= px + ORDER_TOL)}
    return {"value_check": value, "ordering_check": ordering}


def suboptimality_check(spec, gains: GainSchedule, *, n_paths=20000, seed=42, trials=20,
                        rel=0.25, perturb_seed=2024, workers=None) -> dict:
    """Compare the optimal cost with ``trials`` randomly perturbed gain schedules.

    Every run reuses ``seed``, so paths share their noise (common random
    numbers) and the relevant spread is that of the per-path cost
    difference.  A trial is *consistent* when ``diff >= -3 se`` and
    *separated* when ``diff > 3 se``.
    """
    base = path_costs(spec, simulate_paths(spec, AffinePolicy.from_gains(gains), n_paths, seed,
                                           workers=workers))
    rng = np.random.default_rng(perturb_seed)
    rows = []
    for _ in range(trials):
        pert = perturb_gains(gains, rng, rel)
        c = path_costs(spec, simulate_paths(spec, AffinePolicy.from_gains(pert), n_paths, seed,
                                            workers=workers))
        diff = c - base
        se = float(diff.std(ddof=1) / math.sqrt(diff.size))
        mean = float(diff.mean())
        rows.append({"excess": mean, "stderr": se, "consistent": bool(mean >= -3 * se),
                     "separated": bool(mean > 3 * se)})
    return {
        "optimal": float(base.mean()),
        "trials": rows,
        "consistent": all(r["consistent"] for r in rows),
        "separated": sum(r["separated"] for r in rows),
    }


# ------------------------------------------------------------ matrix suite


def _psd(rng, m, rank=None):
    rank = m if rank is None else rank
    M = rng.normal(size=(m, rank))
    return M @ M.T


def _spd(rng, m, lo=0.1):
    return _psd(rng, m) / m + lo * np.eye(m)


def _random_frame(rng):
    n = int(rng.integers(1, 4))
    l1 = int(rng.integers(1, 3))
    l2 = int(rng.integers(1, 3))
    d = int(rng.integers(1, 3))
    dims = Dims(n, l1, l2, d)
    frame = make_frame(
        dims,
        A=rng.normal(size=(n, n)),
        B1=rng.normal(size=(n, l1)),
        B2=rng.normal(size=(n, l2)),
        C=rng.normal(size=(d, n, n)),
        D1=rng.normal(size=(d, n, l1)),
        D2=rng.normal(size=(d, n, l2)),
        Q=_psd(rng, n, rank=int(rng.integers(0, n + 1))),
        R1=_spd(rng, l1),
        R2=_spd(rng, l2),
    )
    return dims, frame


def _record(rep, name, margin, tol=SUITE_TOL):
    r = rep[name]
    r["trials"] += 1
    r["min_margin"] = min(r["min_margin"], margin)
    if margin < -tol:
        r["failures"] += 1


def matrix_property_suite(seed: int = 0, trials: int = 200) -> dict:
    """Randomized checks of the matrix facts the construction relies on.

    * ``Qtilde(S)`` and ``U(S)`` are positive semidefinite for ``S >= 0``;
    * ``F^{-1} - D (R + D' F D)^{-1} D' >= 0`` for ``F, R > 0``;
    * the Woodbury-type inverse formula;
    * the two expressions of ``LambdaHat(P1)`` coincide.

    Margins are minimum eigenvalues for the inequalities and minus the
    largest absolute entry difference for the identities.  Trial 0 of the
    first two checks uses the degenerate draws ``S = 0`` and ``D = 0``.
    """
    rng = np.random.default_rng(seed)
    names = ("qtilde_nonnegative", "u_nonnegative", "inequality", "inverse_formula",
             "lambdahat_identity")
    rep = {k: {"trials": 0, "failures": 0, "min_margin": math.inf} for k in names}
    for t in range(trials):
        dims, frame = _random_frame(rng)
        S = np.zeros((dims.n, dims.n)) if t == 0 else _psd(rng, dims.n, int(rng.integers(1, dims.n + 1)))
        try:
            m = eval_structure_maps(S, frame)
            _record(rep, "qtilde_nonnegative", min_eig(m.Qtilde))
            _record(rep, "u_nonnegative", min_eig(m.U))
        except Exception:  # noqa: BLE001 - the suite reports, never aborts
            _record(rep, "qtilde_nonnegative", -math.inf)
            _record(rep, "u_nonnegative", -math.inf)

        nn, mm = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        D = np.zeros((nn, mm)) if t == 0 else rng.normal(size=(nn, mm))
        R, F = _spd(rng, mm), _spd(rng, nn, lo=0.3)
        lhs = np.linalg.inv(F) - D @ np.linalg.solve(R + D.T @ F @ D, D.T)
        _record(rep, "inequality", min_eig(lhs))

        A = _spd(rng, nn, lo=1.0)
        B = rng.normal(size=(nn, mm))
        Dm = _spd(rng, mm, lo=1.0)
        Cm = B.T + 0.1 * rng.normal(size=(mm, nn))
        Ai = np.linalg.inv(A)
        left = np.linalg.inv(A + B @ np.linalg.solve(Dm, Cm))
        right = Ai - Ai @ B @ np.linalg.solve(Dm + Cm @ Ai @ B, Cm @ Ai)
        _record(rep, "inverse_formula", -float(np.max(np.abs(left - right))))

        n, l1, l2 = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(1, 3))
        P1 = _spd(rng, n, lo=0.2)
        R1, R2 = _spd(rng, l1), _spd(rng, l2)
        D1, D2 = rng.normal(size=(n, l1)), rng.normal(size=(n, l2))
        first = R1 + D1.T @ (P1 - P1 @ D2 @ np.linalg.solve(R2 + D2.T @ P1 @ D2, D2.T @ P1)) @ D1
        second = R1 + D1.T @ np.linalg.inv(np.linalg.inv(P1) + D2 @ np.linalg.solve(R2, D2.T)) @ D1
        fr = make_frame(Dims(n, l1, l2, 1), B1=np.zeros((n, l1)), D1=D1, D2=D2, R1=R1, R2=R2)
        maps = eval_structure_maps(P1, fr)
        diff = max(np.max(np.abs(first - second)), np.max(np.abs(maps.LambdaHat - second)))
        _record(rep, "lambdahat_identity", -float(diff))
    for r in rep.values():
        r["pass"] = r["failures"] == 0
    return rep
