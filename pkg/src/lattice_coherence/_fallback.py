"""Pure-numpy implementations of the hot kernels.

These mirror the compiled versions in ``_kernels.pyx`` argument for argument
and are used when the extension is not built (or when forced through the
``LATTICE_COHERENCE_BACKEND=python`` environment variable).
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def lyap_density_batch(a_hat: np.ndarray, pos: int, dist: int) -> np.ndarray:
    """Re P[dist, dist] for each stacked symbol, where A^H P + P A = -e_pos e_pos^T.

    ``a_hat`` has shape (K, m, m).  The Lyapunov equation is vectorised
    column-major, vec(A^H P + P A) = (I kron A^H + A^T kron I) vec(P), and the
    K small systems are solved in one batched call.  Singular systems give nan.
    """
    a = np.ascontiguousarray(a_hat, dtype=complex)
    K, m, _ = a.shape
    eye = np.eye(m)
    # T[k, j, i, s, r] multiplies P[r, s] in equation (i, j)
    T = np.einsum("js,kri->kjisr", eye, a.conj()) + np.einsum("ir,ksj->kjisr", eye, a)
    M = T.reshape(K, m * m, m * m)
    rhs = np.zeros((K, m * m), dtype=complex)
    rhs[:, pos * m + pos] = -1.0
    out = np.full(K, np.nan)
    if K == 0:
        return out
    try:
        sol = np.linalg.solve(M, rhs[..., None])[..., 0]
        out[:] = sol[:, dist * m + dist].real
    except np.linalg.LinAlgError:
        for k in range(K):
            try:
                out[k] = np.linalg.solve(M[k], rhs[k])[dist * m + dist].real
            except np.linalg.LinAlgError:
                pass
    return out


def em_chunk(
    indptr: np.ndarray,
    indices: np.ndarray,
    data: np.ndarray,
    X: np.ndarray,
    noise: np.ndarray,
    noise_rows: np.ndarray,
    pos_rows: np.ndarray,
    dt: float,
    scale: float,
    step0: int,
    acc_start: int,
    ysum: np.ndarray,
    ysq: np.ndarray,
    rec: np.ndarray,
    rec_every: int,
) -> None:
    """Advance every trajectory in ``X`` (T, n) by ``noise.shape[0]`` Euler-Maruyama steps.

    Steps with global index >= ``acc_start`` add the deviation-from-average
    output to the per-trajectory accumulators ``ysum`` and ``ysq`` (T, p).
    Trajectory 0 is written to ``rec`` (R, p) every ``rec_every`` accumulated
    steps.  All arrays are updated in place.
    """
    n = X.shape[1]
    M = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    R = rec.shape[0]
    for s in range(noise.shape[0]):
        step = step0 + s
        drift = M @ X.T
        X += dt * drift.T
        X[:, noise_rows] += scale * noise[s]
        if step >= acc_start:
            Y = X[:, pos_rows]
            Y = Y - Y.mean(axis=1, keepdims=True)
            ysum += Y
            ysq += Y * Y
            if rec_every > 0:
                k = step - acc_start
                if k % rec_every == 0 and k // rec_every < R:
                    rec[k // rec_every] = Y[0]
