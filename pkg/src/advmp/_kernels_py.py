"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` with the same signature.
Norm kinds are passed as integer codes: 0 = l1, 1 = l2, 2 = linf.
"""
import numpy as np

L1, L2, LINF = 0, 1, 2


def project_rows(D, kind, radius):
    """Project each row of ``D`` onto the origin-centred ball of ``radius``."""
    D = np.array(D, dtype=np.float64, copy=True)
    if D.ndim != 2:
        raise ValueError("project_rows expects a 2-D array")
    if radius <= 0.0:
        return np.zeros_like(D)
    if kind == LINF:
        return np.clip(D, -radius, radius)
    if kind == L2:
        norms = np.sqrt(np.einsum("ij,ij->i", D, D))
        outside = norms > radius
        D[outside] *= (radius / norms[outside])[:, None]
        return D
    if kind == L1:
        A = np.abs(D)
        outside = A.sum(axis=1) > radius
        if not outside.any():
            return D
        Ao = A[outside]
        U = -np.sort(-Ao, axis=1)
        css = np.cumsum(U, axis=1) - radius
        j = np.arange(1, D.shape[1] + 1, dtype=np.float64)
        # last index where u_j > (cumsum_j - r) / j
        cond = U * j > css
        cond[:, 0] = True  # exact in real arithmetic; rounding can break it for tiny radii
        rho = D.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
        tau = css[np.arange(len(rho)), rho] / (rho + 1.0)
        D[outside] = np.sign(D[outside]) * np.maximum(Ao - tau[:, None], 0.0)
        return D
    raise ValueError(f"unknown norm code {kind}")


def ascent_rows(G, kind, step, k):
    """Norm-specific steepest-ascent direction for each row of ``G``, scaled by ``step``."""
    G = np.asarray(G, dtype=np.float64)
    if kind == LINF:
        return step * np.sign(G)
    if kind == L2:
        norms = np.sqrt(np.einsum("ij,ij->i", G, G))
        out = np.zeros_like(G)
        nz = norms > 0.0
        out[nz] = step * G[nz] / norms[nz, None]
        return out
    if kind == L1:
        n, d = G.shape
        if k < 1 or k > d:
            raise ValueError(f"top-k must satisfy 1 <= k <= {d}, got {k}")
        idx = np.argsort(-np.abs(G), axis=1, kind="stable")[:, :k]
        rows = np.arange(n)[:, None]
        out = np.zeros_like(G)
        out[rows, idx] = step * np.sign(G[rows, idx]) / k
        return out
    raise ValueError(f"unknown norm code {kind}")


def _linreg_losses(X, y, theta, delta):
    r = (X + delta) @ theta - y
    return r * r, r


def pgd_linreg(X, y, theta, delta0, kinds, radii, step_sizes, ks, steps):
    """Joint PGD on squared-error linear regression, one row per example.

    At every iteration each candidate threat proposes
    ``project(delta + ascent(grad))``; the loss-maximising candidate is kept
    per row (ties go to the lowest candidate index). The best iterate ever
    visited is returned together with its loss.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    delta = np.array(delta0, dtype=np.float64, copy=True)
    n = X.shape[0]
    rows = np.arange(n)
    loss, r = _linreg_losses(X, y, theta, delta)
    best_delta = delta.copy()
    best_loss = loss.copy()
    P = len(kinds)
    for _ in range(steps):
        grad = (2.0 * r)[:, None] * theta[None, :]
        cands = []
        closs = np.empty((P, n))
        cres = np.empty((P, n))
        for p in range(P):
            c = project_rows(delta + ascent_rows(grad, kinds[p], step_sizes[p], ks[p]),
                             kinds[p], radii[p])
            cands.append(c)
            closs[p], cres[p] = _linreg_losses(X, y, theta, c)
        pick = np.argmax(closs, axis=0)
        delta = np.stack(cands)[pick, rows]
        loss = closs[pick, rows]
        r = cres[pick, rows]
        improved = loss > best_loss
        best_loss[improved] = loss[improved]
        best_delta[improved] = delta[improved]
    return best_delta, best_loss
