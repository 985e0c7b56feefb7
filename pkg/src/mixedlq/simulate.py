"""Mean ODE, Euler-Maruyama path simulation and Monte Carlo cost estimation.

The deterministic control only ever sees the mean state, which is taken from
the mean ODE rather than from the empirical ensemble average.  Paths are
therefore independent given their noise, and each path's noise comes from its
own counter-based Philox stream keyed by ``(seed, path index)``.  Any split of
paths over workers gives bitwise-identical results.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import BlowUp, EmptyBundle, GridMismatch, InputError
from .kernels import get_kernel
from .model import ProblemSpec
from .riccati import BLOWUP, RiccatiSolution, TimeGrid, step_frames
from .synthesis import GainSchedule

CHUNK = 1024


@dataclass(frozen=True, eq=False)
class AffinePolicy:
    """``u1 = F1 Xbar + h1`` and ``u2 = F2 X + F2bar Xbar + h2`` at grid nodes."""

    grid: TimeGrid
    F1: np.ndarray     # (N+1, l1, n)
    h1: np.ndarray     # (N+1, l1)
    F2: np.ndarray     # (N+1, l2, n)
    F2bar: np.ndarray  # (N+1, l2, n)
    h2: np.ndarray     # (N+1, l2)

    @classmethod
    def from_gains(cls, gains: GainSchedule) -> "AffinePolicy":
        N1 = gains.grid.steps + 1
        return cls(
            gains.grid,
            gains.M1.copy(),
            np.zeros((N1, gains.M1.shape[1])),
            gains.M2.copy(),
            gains.M3 - gains.M2,
            np.zeros((N1, gains.M2.shape[1])),
        )

    @classmethod
    def zero(cls, spec: ProblemSpec, grid: TimeGrid) -> "AffinePolicy":
        N1, (n, l1, l2) = grid.steps + 1, (spec.dims.n, spec.dims.l1, spec.dims.l2)
        return cls(grid, np.zeros((N1, l1, n)), np.zeros((N1, l1)), np.zeros((N1, l2, n)),
                   np.zeros((N1, l2, n)), np.zeros((N1, l2)))

    def check(self, spec: ProblemSpec):
        n, l1, l2 = spec.dims.n, spec.dims.l1, spec.dims.l2
        N1 = self.grid.steps + 1
        want = {"F1": (N1, l1, n), "h1": (N1, l1), "F2": (N1, l2, n),
                "F2bar": (N1, l2, n), "h2": (N1, l2)}
        for k, shape in want.items():
            if getattr(self, k).shape != shape:
                raise GridMismatch(f"policy {k} has shape {getattr(self, k).shape}, expected {shape}")
        step_frames(spec, self.grid)


@dataclass(frozen=True, eq=False)
class TrajectoryBundle:
    grid: TimeGrid
    mean_path: np.ndarray  # (N+1, n)
    paths: np.ndarray      # (P, N+1, n)
    controls1: np.ndarray  # (N, l1), shared by all paths
    controls2: np.ndarray  # (P, N, l2)
    seed: int
    antithetic: bool = False
    noise_dim: int = 1

    @property
    def P(self):
        return self.paths.shape[0]

    def normals(self, start=0, stop=None):
        """Regenerate the standard normal draws used for paths ``start:stop``."""
        stop = self.P if stop is None else stop
        return draw_normals(self.seed, start, stop, self.grid.steps, self.noise_dim,
                            self.antithetic)


def _path_stream(seed, k):
    return np.random.Generator(np.random.Philox(key=[seed, k]))


def draw_normals(seed, start, stop, N, d, antithetic=False):
    """Standard normals of shape ``(stop - start, N, d)``.

    Path ``k`` draws from a Philox stream keyed by ``(seed, k)``.  With
    ``antithetic`` paths ``2m`` and ``2m+1`` share stream ``m`` with opposite
    signs.
    """
    if not 0 <= seed < 2**64:
        raise InputError("seed must be a non-negative 64-bit integer")
    out = np.empty((stop - start, N, d))
    for k in range(start, stop):
        if antithetic:
            z = _path_stream(seed, k // 2).standard_normal((N, d))
            out[k - start] = -z if k % 2 else z
        else:
            out[k - start] = _path_stream(seed, k).standard_normal((N, d))
    return out


def _mean_generator(spec, policy, frames):
    N = policy.grid.steps
    n = spec.dims.n
    Mg = np.empty((N, 2, n, n))
    off = np.empty((N, 2, n))
    for i, fr in enumerate(frames):
        for s, k in enumerate((i, i + 1)):
            Mg[i, s] = fr.A + fr.B1 @ policy.F1[k] + fr.B2 @ (policy.F2[k] + policy.F2bar[k])
            off[i, s] = fr.B1 @ policy.h1[k] + fr.B2 @ policy.h2[k]
    return Mg, off


def simulate_mean(spec: ProblemSpec, policy: AffinePolicy) -> np.ndarray:
    """RK4 integration of the mean ODE under an affine policy.

    Midpoint stages use the average of the two neighbouring node gains.
    Returns an ``(N+1, n)`` array starting at ``x0``.
    """
    policy.check(spec)
    frames = step_frames(spec, policy.grid)
    Mg, off = _mean_generator(spec, policy, frames)
    h = policy.grid.dt
    times = policy.grid.times
    out = np.empty((policy.grid.steps + 1, spec.dims.n))
    out[0] = spec.x0
    for i in range(policy.grid.steps):
        M0, M1 = Mg[i, 0], Mg[i, 1]
        b0, b1 = off[i, 0], off[i, 1]
        Mm, bm = 0.5 * (M0 + M1), 0.5 * (b0 + b1)
        x = out[i]
        k1 = M0 @ x + b0
        k2 = Mm @ (x + 0.5 * h * k1) + bm
        k3 = Mm @ (x + 0.5 * h * k2) + bm
        k4 = M1 @ (x + h * k3) + b1
        out[i + 1] = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(out[i + 1])) or np.linalg.norm(out[i + 1]) > BLOWUP:
            raise BlowUp("mean path exceeded threshold", time=times[i + 1])
    return out


def _fold(spec, policy, frames, mean):
    """Per-step coefficients with the deterministic parts folded in."""
    N = policy.grid.steps
    n, l2, d = spec.dims.n, spec.dims.l2, spec.dims.d
    Ad = np.empty((N, n, n))
    ad = np.empty((N, n))
    Cd = np.empty((N, d, n, n))
    cd = np.empty((N, d, n))
    g = np.empty((N, l2))
    u1 = np.empty((N, spec.dims.l1))
    for i, fr in enumerate(frames):
        u1[i] = policy.F1[i] @ mean[i] + policy.h1[i]
        g[i] = policy.F2bar[i] @ mean[i] + policy.h2[i]
        Ad[i] = fr.A + fr.B2 @ policy.F2[i]
        ad[i] = fr.B1 @ u1[i] + fr.B2 @ g[i]
        Cd[i] = fr.C + fr.D2 @ policy.F2[i]
        cd[i] = fr.D1 @ u1[i] + fr.D2 @ g[i]
    F2 = np.ascontiguousarray(policy.F2[:N])
    return Ad, ad, Cd, cd, F2, g, u1


def simulate_paths(spec: ProblemSpec, policy: AffinePolicy, n_paths: int, seed: int, *,
                   antithetic: bool = False, workers: int | None = None,
                   backend: str | None = None) -> TrajectoryBundle:
    """Euler-Maruyama simulation of the closed loop under ``policy``.

    Gains are applied at the left node of each step.  ``workers`` only changes
    how the fixed blocks of ``CHUNK`` paths are scheduled, never the result.
    """
    if n_paths < 1:
        raise InputError("n_paths must be >= 1")
    if antithetic and n_paths % 2:
        raise InputError("antithetic sampling needs an even number of paths")
    mean = simulate_mean(spec, policy)
    frames = step_frames(spec, policy.grid)
    Ad, ad, Cd, cd, F2, g, u1 = _fold(spec, policy, frames, mean)
    N, n, l2, d = policy.grid.steps, spec.dims.n, spec.dims.l2, spec.dims.d
    dt = policy.grid.dt
    kernel = get_kernel(backend)
    paths = np.empty((n_paths, N + 1, n))
    u2 = np.empty((n_paths, N, l2))
    x0 = np.ascontiguousarray(spec.x0, dtype=float)

    def run(start):
        stop = min(start + CHUNK, n_paths)
        xi = draw_normals(seed, start, stop, N, d, antithetic)
        return start, kernel(Ad, ad, Cd, cd, F2, g, x0, xi, dt, paths[start:stop], u2[start:stop])

    starts = range(0, n_paths, CHUNK)
    workers = workers or min(len(starts), os.cpu_count() or 1)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(s) for s in starts]
    for start, code in results:
        if code >= 0:
            p, i = divmod(code, N)
            raise BlowUp("path exceeded threshold", path=start + p, time=policy.grid.times[i + 1])

    return TrajectoryBundle(policy.grid, mean, paths, u1, u2, int(seed), bool(antithetic), d)


@dataclass(frozen=True)
class CostEstimate:
    mc_mean: float
    mc_stderr: float
    predicted: float | None
    n_paths: int
    seed: int | None = None

    def to_json(self):
        doc = {"mc_mean": self.mc_mean, "mc_stderr": self.mc_stderr,
               "predicted": self.predicted, "n_paths": self.n_paths, "seed": self.seed}
        return json.dumps(doc, indent=1, default=_fmt17)


def _fmt17(x):
    return float(f"{x:.17g}")


def path_costs(spec: ProblemSpec, bundle: TrajectoryBundle) -> np.ndarray:
    """Per-path cost with left-point quadrature of the running cost."""
    frames = step_frames(spec, bundle.grid)
    N, dt = bundle.grid.steps, bundle.grid.dt
    X = bundle.paths[:, :N, :]
    Q = np.stack([fr.Q for fr in frames])
    R1 = np.stack([fr.R1 for fr in frames])
    R2 = np.stack([fr.R2 for fr in frames])
    run = np.einsum("pia,iab,pib->pi", X, Q, X)
    run += np.einsum("pia,iab,pib->pi", bundle.controls2, R2, bundle.controls2)
    run += np.einsum("ia,iab,ib->i", bundle.controls1, R1, bundle.controls1)[None, :]
    XT = bundle.paths[:, N, :]
    term = np.einsum("pa,ab,pb->p", XT, spec.G, XT)
    return 0.5 * (run.sum(axis=1) * dt + term)


def estimate_cost(spec: ProblemSpec, bundle: TrajectoryBundle,
                  riccati: RiccatiSolution | None = None) -> CostEstimate:
    """Monte Carlo mean and standard error of the cost.

    ``predicted`` is ``0.5 <P2(0) x0, x0>`` when a Riccati solution is given.
    """
    if bundle.P == 0:
        raise EmptyBundle("bundle has no paths")
    c = path_costs(spec, bundle)
    se = float(np.std(c, ddof=1) / np.sqrt(c.size)) if c.size > 1 else float("nan")
    pred = riccati.value(spec.x0) if riccati is not None else None
    return CostEstimate(float(c.mean()), se, pred, int(c.size), bundle.seed)


def write_paths_csv(bundle: TrajectoryBundle, path) -> None:
    """Mean path (one row per node) followed by per-path terminal states."""
    import csv

    n = bundle.mean_path.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "index", "t"] + [f"x{a}" for a in range(n)])
        for i, t in enumerate(bundle.grid.times):
            w.writerow(["mean", i, f"{t:.17g}"] + [f"{v:.17g}" for v in bundle.mean_path[i]])
        T = bundle.grid.T
        for p in range(bundle.P):
            w.writerow(["terminal", p, f"{T:.17g}"] + [f"{v:.17g}" for v in bundle.paths[p, -1]])
