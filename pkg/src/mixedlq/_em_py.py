"""Pure numpy Euler-Maruyama kernel (fallback for the compiled ``_em``)."""
import numpy as np

BLOWUP = 1e12


def em_chunk(Ad, ad, Cd, cd, F2, g, x0, xi, dt, paths_out, u2_out):
    """Advance a block of paths through all steps of the closed loop.

    Per step ``i`` with folded coefficients::

        u2    = F2[i] X + g[i]
        X_new = X + (Ad[i] X + ad[i]) dt + sum_j (Cd[i, j] X + cd[i, j]) sqrt(dt) xi[:, i, j]

    Writes ``paths_out`` (p, N+1, n) and ``u2_out`` (p, N, l2) in place.
    Returns ``-1`` on success, otherwise ``path * N + step`` for the lowest
    failing path and the first step at which its norm exceeded the blow-up
    threshold.
    """
    p, N, d = xi.shape
    sq = np.sqrt(dt)
    paths_out[:, 0, :] = x0
    X = paths_out[:, 0, :]
    lim2 = BLOWUP * BLOWUP
    first_bad = np.full(p, -1)
    # paths that blew up keep running (as inf/nan) so every path's first
    # failure step is known
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(N):
            u2 = X @ F2[i].T + g[i]
            u2_out[:, i, :] = u2
            Xn = X + (X @ Ad[i].T + ad[i]) * dt
            for j in range(d):
                Xn += (X @ Cd[i, j].T + cd[i, j]) * (sq * xi[:, i, j])[:, None]
            paths_out[:, i + 1, :] = Xn
            nrm = np.einsum("pk,pk->p", Xn, Xn)
            bad = ~(nrm <= lim2) & (first_bad < 0)
            first_bad[bad] = i
            X = Xn
    hit = np.flatnonzero(first_bad >= 0)
    if hit.size:
        return int(hit[0]) * N + int(first_bad[hit[0]])
    return -1
