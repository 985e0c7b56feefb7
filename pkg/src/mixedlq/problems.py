"""Reference problems used by the tests, the acceptance suite and the CLI examples."""
import numpy as np

from .model import Dims, make_problem


def scalar_riccati_oracle():
    """P1(t) = g / (1 + g (T - t)); P1(0) = 0.5."""
    return make_problem(Dims(1, 0, 1, 1), T=1.0, A=0, B2=1, Q=0, R2=1, G=1, x0=[1.0])


def scalar_lyapunov():
    """No random control channel: P1(t) = T - t."""
    return make_problem(Dims(1, 1, 0, 1), T=1.0, A=0, B1=1, Q=1, R1=1, G=0, x0=[1.0])


def tanh_problem(x0=1.0):
    """Noise-free scalar problem; P2 = K = tanh(sqrt(2) (T - t)) / sqrt(2)."""
    return make_problem(Dims(1, 1, 1, 1), T=1.0, A=0, B1=1, B2=1, Q=1, R1=1, R2=1, G=0,
                        x0=[x0])


def zero_problem():
    return make_problem(Dims(2, 1, 1, 1), T=1.0, A=[[0.1, 0.3], [-0.2, 0.0]],
                        B1=[[1.0], [0.0]], B2=[[0.0], [1.0]], C=[[0.2, 0.0], [0.0, 0.1]],
                        D1=[[0.1], [0.0]], D2=[[0.0], [0.3]], Q=np.zeros((2, 2)),
                        R1=1, R2=1, G=np.zeros((2, 2)), x0=[1.0, -1.0])


def _spd(rng, m, lo=0.5):
    M = rng.normal(size=(m, m))
    return M @ M.T / m + lo * np.eye(m)


def random_problem(seed, n=2, l1=1, l2=1, d=2, T=1.0, scale=0.4):
    """A seeded Regular problem with moderately sized coefficients."""
    rng = np.random.default_rng(seed)
    Gm = rng.normal(size=(n, n))
    x0 = rng.normal(size=n)
    x0 /= np.linalg.norm(x0)
    return make_problem(
        Dims(n, l1, l2, d), T=T,
        A=scale * rng.normal(size=(n, n)),
        B1=rng.normal(size=(n, l1)),
        B2=rng.normal(size=(n, l2)),
        C=[scale * rng.normal(size=(n, n)) for _ in range(d)],
        D1=[scale * rng.normal(size=(n, l1)) for _ in range(d)],
        D2=[scale * rng.normal(size=(n, l2)) for _ in range(d)],
        Q=_spd(rng, n, 0.2),
        R1=_spd(rng, l1) if l1 else None,
        R2=_spd(rng, l2) if l2 else None,
        G=Gm @ Gm.T / n,
        x0=x0,
    )


def regular_2x2(seed=7):
    """Two states, one control of each kind, two noises."""
    return random_problem(seed, n=2, l1=1, l2=1, d=2)


def singular_r2():
    """R2 = 0 compensated by control-dependent noise (D2)'D2 > 0 and G > 0."""
    return make_problem(Dims(1, 1, 1, 1), T=1.0, A=0.2, B1=1, B2=1, C=0.3, D1=0.2, D2=1.0,
                        Q=1, R1=1, R2=0, G=1, x0=[1.0])


def singular_r1():
    """R1 = 0 compensated by (D1)'D1 > 0 and G > 0."""
    return make_problem(Dims(1, 1, 1, 1), T=1.0, A=0.2, B1=1, B2=1, C=0.3, D1=1.0, D2=0.2,
                        Q=1, R1=0, R2=1, G=1, x0=[1.0])


def are_scalar(with_deterministic=True):
    """P1inf = 1 and P2inf = 1/sqrt(2) (or 1 without the deterministic channel)."""
    if with_deterministic:
        return make_problem(Dims(1, 1, 1, 1), T=1.0, A=0, B1=1, B2=1, Q=1, R1=1, R2=1, G=0,
                            x0=[1.0])
    return make_problem(Dims(1, 0, 1, 1), T=1.0, A=0, B2=1, Q=1, R2=1, G=0, x0=[1.0])


def unstabilizable_scalar():
    return make_problem(Dims(1, 1, 1, 1), T=1.0, A=1, B1=1, B2=0, Q=1, R1=1, R2=1, G=0,
                        x0=[1.0])


REFERENCE = {
    "riccati_oracle": scalar_riccati_oracle,
    "lyapunov": scalar_lyapunov,
    "tanh": tanh_problem,
    "zero": zero_problem,
    "regular_2x2": regular_2x2,
    "singular_r2": singular_r2,
    "singular_r1": singular_r1,
    "are_scalar": are_scalar,
    "unstabilizable": unstabilizable_scalar,
}
