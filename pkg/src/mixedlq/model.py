"""Problem data: dimensions, piecewise-constant coefficient schedules, validation.

The controlled state equation is

    dX = (A X + B1 u1 + B2 u2) dt + sum_j (C_j X + D1_j u1 + D2_j u2) dW_j

with quadratic running weights Q, R1, R2 and terminal weight G.  ``u1`` is a
deterministic time function, ``u2`` an adapted process.  All coefficients are
constant on each interval of a breakpoint schedule.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    Inadmissible,
    InputError,
    NotPSD,
    NotSymmetric,
    OutOfRange,
)

SYM_TOL = 1e-12
PSD_TOL = 1e-10
EPSILON = 1e-10


@dataclass(frozen=True)
class Dims:
    n: int
    l1: int
    l2: int
    d: int

    def __post_init__(self):
        for name in ("n", "l1", "l2", "d"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                raise DimensionMismatch(f"{name} must be an integer, got {v!r}")
        if self.n < 1 or self.d < 1:
            raise DimensionMismatch("n and d must be >= 1")
        if self.l1 < 0 or self.l2 < 0 or self.l1 + self.l2 < 1:
            raise DimensionMismatch("need l1, l2 >= 0 and l1 + l2 >= 1")


@dataclass(frozen=True, eq=False)
class CoefficientFrame:
    """Coefficients on one interval.

    ``C``, ``D1``, ``D2`` are stacked over the noise index as arrays of shape
    ``(d, n, n)``, ``(d, n, l1)`` and ``(d, n, l2)``.
    """

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    Q: np.ndarray
    R1: np.ndarray
    R2: np.ndarray

    @property
    def B(self):
        return np.hstack([self.B1, self.B2])

    @property
    def D(self):
        return np.concatenate([self.D1, self.D2], axis=2)

    @property
    def R(self):
        l1, l2 = self.R1.shape[0], self.R2.shape[0]
        out = np.zeros((l1 + l2, l1 + l2))
        out[:l1, :l1] = self.R1
        out[l1:, l1:] = self.R2
        return out

    def matrices(self):
        return {k: getattr(self, k) for k in FRAME_KEYS}


FRAME_KEYS = ("A", "B1", "B2", "C", "D1", "D2", "Q", "R1", "R2")


@dataclass(frozen=True, eq=False)
class CoefficientSchedule:
    breakpoints: np.ndarray
    frames: tuple[CoefficientFrame, ...]

    @property
    def is_time_invariant(self):
        return len(self.frames) == 1


class Regularity(str, enum.Enum):
    REGULAR = "Regular"
    SINGULAR_R2 = "SingularR2"
    SINGULAR_R1 = "SingularR1"


@dataclass(frozen=True)
class RegularityClass:
    tag: Regularity
    evidence: dict = field(default_factory=dict, compare=False)

    def __str__(self):
        return self.tag.value


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    dims: Dims
    horizon: float
    schedule: CoefficientSchedule
    G: np.ndarray
    x0: np.ndarray
    sym_tol: float = SYM_TOL
    psd_tol: float = PSD_TOL
    epsilon: float = EPSILON

    @property
    def T(self):
        return self.horizon

    @property
    def frames(self):
        return self.schedule.frames

    @property
    def breakpoints(self):
        return self.schedule.breakpoints

    def frame_at(self, t):
        return frame_at(self, t)

    def replace(self, **changes):
        """Return a copy with top-level fields replaced (validation not rerun)."""
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return ProblemSpec(**kw)


def _shape_check(name, arr, shape):
    if arr.shape != shape:
        raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {shape}")


def _min_eig(M):
    if M.size == 0:
        return np.inf
    return float(np.linalg.eigvalsh(M).min())


def _check_sym(name, M, tol, where=""):
    if M.size and np.max(np.abs(M - M.T)) > tol:
        raise NotSymmetric(
            f"{name}{where} asymmetric by {np.max(np.abs(M - M.T)):.3e} (tol {tol:g})"
        )


def _check_psd(name, M, tol, where=""):
    lam = _min_eig(M)
    if lam < -tol:
        raise NotPSD(f"{name}{where} has eigenvalue {lam:.6g} < -{tol:g}")


def _symmetrize(M):
    if M.size:
        M[...] = 0.5 * (M + M.T)


def _check_shapes(spec: ProblemSpec):
    n, l1, l2, d = spec.dims.n, spec.dims.l1, spec.dims.l2, spec.dims.d
    shapes = {
        "A": (n, n), "B1": (n, l1), "B2": (n, l2), "C": (d, n, n),
        "D1": (d, n, l1), "D2": (d, n, l2), "Q": (n, n), "R1": (l1, l1), "R2": (l2, l2),
    }
    for i, fr in enumerate(spec.frames):
        for key, shape in shapes.items():
            _shape_check(f"frames[{i}].{key}", getattr(fr, key), shape)
    _shape_check("G", spec.G, (n, n))
    _shape_check("x0", spec.x0, (n,))
    bp = spec.breakpoints
    if not spec.horizon > 0:
        raise InputError(f"horizon must be positive, got {spec.horizon}")
    if bp.ndim != 1 or len(bp) != len(spec.frames) + 1:
        raise DimensionMismatch(
            f"{len(spec.frames)} frames need {len(spec.frames) + 1} breakpoints, got {len(bp)}"
        )
    if bp[0] != 0.0 or bp[-1] != spec.horizon or np.any(np.diff(bp) <= 0):
        raise InputError("breakpoints must increase strictly from 0 to the horizon")


def validate(spec: ProblemSpec) -> RegularityClass:
    """Check shapes, symmetry and definiteness, then classify the problem.

    Q, R1, R2 and G are symmetrized in place as ``(M + M')/2`` and all arrays
    are frozen (made read-only) afterwards, so calling this twice is harmless.

    Returns
    -------
    RegularityClass
        ``Regular`` when both control weights are uniformly positive;
        otherwise one of the two singular classes whose hypotheses hold.

    Raises
    ------
    DimensionMismatch, NotSymmetric, NotPSD, Inadmissible
    """
    _check_shapes(spec)
    eps = spec.epsilon
    for i, fr in enumerate(spec.frames):
        where = f" on interval {i}"
        for key in ("Q", "R1", "R2"):
            M = getattr(fr, key)
            _check_sym(key, M, spec.sym_tol, where)
            _check_psd(key, M, spec.psd_tol, where)
    _check_sym("G", spec.G, spec.sym_tol)
    _check_psd("G", spec.G, spec.psd_tol)

    for fr in spec.frames:
        for key in ("Q", "R1", "R2"):
            M = getattr(fr, key)
            if M.flags.writeable:
                _symmetrize(M)
    if spec.G.flags.writeable:
        _symmetrize(spec.G)
    _freeze(spec)

    r1 = min(_min_eig(fr.R1) for fr in spec.frames)
    r2 = min(_min_eig(fr.R2) for fr in spec.frames)
    dd1 = min(_min_eig(np.einsum("jai,jak->ik", fr.D1, fr.D1)) for fr in spec.frames)
    dd2 = min(_min_eig(np.einsum("jai,jak->ik", fr.D2, fr.D2)) for fr in spec.frames)
    g = _min_eig(spec.G)
    evidence = {
        "min_eig_R1": r1, "min_eig_R2": r2, "min_eig_D1tD1": dd1,
        "min_eig_D2tD2": dd2, "min_eig_G": g, "epsilon": eps,
    }
    if r1 >= eps and r2 >= eps:
        return RegularityClass(Regularity.REGULAR, evidence)
    if r1 >= eps and dd2 >= eps and g >= eps:
        return RegularityClass(Regularity.SINGULAR_R2, evidence)
    if r2 >= eps and dd1 >= eps and g >= eps:
        return RegularityClass(Regularity.SINGULAR_R1, evidence)

    failed = []
    if r1 < eps:
        failed.append(f"R1 >> 0 (min eig {r1:.3g})")
    if r2 < eps:
        failed.append(f"R2 >> 0 (min eig {r2:.3g})")
    if r1 < eps and dd1 < eps:
        failed.append(f"(D1)'D1 >> 0 (min eig {dd1:.3g})")
    if r2 < eps and dd2 < eps:
        failed.append(f"(D2)'D2 >> 0 (min eig {dd2:.3g})")
    if g < eps:
        failed.append(f"G > 0 (min eig {g:.3g})")
    raise Inadmissible("no admissible hypothesis set holds; failed: " + "; ".join(failed))


def _freeze(spec):
    for fr in spec.frames:
        for key in FRAME_KEYS:
            getattr(fr, key).flags.writeable = False
    spec.G.flags.writeable = False
    spec.x0.flags.writeable = False
    spec.breakpoints.flags.writeable = False


def frame_at(spec: ProblemSpec, t: float) -> CoefficientFrame:
    """Coefficients in force at time ``t``.

    Right-continuous at interior breakpoints; ``t == T`` returns the last frame.
    """
    if not 0.0 <= t <= spec.horizon:
        raise OutOfRange(f"t={t!r} outside [0, {spec.horizon}]")
    idx = int(np.searchsorted(spec.breakpoints, t, side="right")) - 1
    return spec.frames[min(idx, len(spec.frames) - 1)]


# ---------------------------------------------------------------- builders


def _mat(x, shape, name):
    if x is None:
        return np.zeros(shape)
    arr = np.array(x, dtype=float)
    if arr.size == 0 and int(np.prod(shape)) == 0:
        return np.zeros(shape)
    if arr.ndim == 0 and shape == (1, 1):
        arr = arr.reshape(1, 1)
    if arr.shape != shape:
        raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def _stack(x, d, shape, name):
    if x is None or (np.size(x) == 0 and 0 in shape):
        return np.zeros((d,) + shape)
    if isinstance(x, np.ndarray) and x.ndim == 3:
        return _mat(x, (d,) + shape, name)
    if np.ndim(x) <= 2 and not (isinstance(x, (list, tuple)) and len(x) == d and d > 1):
        # single matrix given for d == 1, or a scalar
        if d != 1:
            raise DimensionMismatch(f"{name} must be a length-{d} list of matrices")
        return _mat(x, shape, name)[None]
    if len(x) != d:
        raise DimensionMismatch(f"{name} must have {d} entries, got {len(x)}")
    return np.stack([_mat(m, shape, f"{name}[{j}]") for j, m in enumerate(x)])


def make_frame(dims: Dims, *, A=None, B1=None, B2=None, C=None, D1=None, D2=None,
               Q=None, R1=None, R2=None) -> CoefficientFrame:
    """Build a frame, filling omitted blocks with zeros of the right shape."""
    n, l1, l2, d = dims.n, dims.l1, dims.l2, dims.d
    return CoefficientFrame(
        A=_mat(A, (n, n), "A"),
        B1=_mat(B1, (n, l1), "B1"),
        B2=_mat(B2, (n, l2), "B2"),
        C=_stack(C, d, (n, n), "C"),
        D1=_stack(D1, d, (n, l1), "D1"),
        D2=_stack(D2, d, (n, l2), "D2"),
        Q=_mat(Q, (n, n), "Q"),
        R1=_mat(R1, (l1, l1), "R1"),
        R2=_mat(R2, (l2, l2), "R2"),
    )


def make_problem(dims: Dims, *, T: float, G, x0, frames: Sequence[dict] | None = None,
                 breakpoints=None, **coeffs) -> ProblemSpec:
    """Convenience constructor.

    Either pass the coefficient blocks directly as keyword arguments (one
    interval) or a list of per-interval dicts in ``frames`` with matching
    ``breakpoints``.
    """
    if frames is None:
        frames = [coeffs]
    elif coeffs:
        raise TypeError("pass coefficients either as keywords or via frames, not both")
    if breakpoints is None:
        if len(frames) != 1:
            raise InputError("breakpoints required for more than one frame")
        breakpoints = [0.0, T]
    return ProblemSpec(
        dims=dims,
        horizon=float(T),
        schedule=CoefficientSchedule(
            breakpoints=np.array(breakpoints, dtype=float),
            frames=tuple(make_frame(dims, **fr) for fr in frames),
        ),
        G=_mat(G, (dims.n, dims.n), "G"),
        x0=np.atleast_1d(np.array(x0, dtype=float)),
    )


# --------------------------------------------------------------------- JSON


def problem_from_dict(doc: dict) -> ProblemSpec:
    try:
        dd = doc["dims"]
        dims = Dims(int(dd["n"]), int(dd["l1"]), int(dd["l2"]), int(dd["d"]))
        sched = doc["schedule"]
        tols = doc.get("tolerances", {})
        spec = make_problem(
            dims,
            T=float(doc["horizon"]),
            G=doc["G"],
            x0=doc["x0"],
            frames=[{k: fr.get(k) for k in FRAME_KEYS} for fr in sched["frames"]],
            breakpoints=sched["breakpoints"],
        )
    except KeyError as exc:
        raise InputError(f"problem file missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        raise InputError(f"malformed problem file: {exc}") from None
    if tols:
        spec = spec.replace(
            sym_tol=float(tols.get("symmetry", SYM_TOL)),
            psd_tol=float(tols.get("psd", PSD_TOL)),
            epsilon=float(tols.get("epsilon", EPSILON)),
        )
    return spec


def problem_to_dict(spec: ProblemSpec) -> dict:
    def lst(a):
        return np.asarray(a).tolist()

    return {
        "dims": {"n": spec.dims.n, "l1": spec.dims.l1, "l2": spec.dims.l2, "d": spec.dims.d},
        "horizon": spec.horizon,
        "schedule": {
            "breakpoints": lst(spec.breakpoints),
            "frames": [{k: lst(getattr(fr, k)) for k in FRAME_KEYS} for fr in spec.frames],
        },
        "G": lst(spec.G),
        "x0": lst(spec.x0),
        "tolerances": {"symmetry": spec.sym_tol, "psd": spec.psd_tol, "epsilon": spec.epsilon},
    }


def load_problem(path) -> ProblemSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
    return problem_from_dict(doc)


def save_problem(spec: ProblemSpec, path) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(spec), indent=1))
