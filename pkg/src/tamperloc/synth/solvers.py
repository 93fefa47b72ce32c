"""Gradient-domain blending and diffusion fill on a 4-neighbour grid."""
from __future__ import annotations

import numpy as np
import scipy.sparse
from scipy.sparse.linalg import cg

NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1))


class SolverError(RuntimeError):
    pass


def laplacian(x: np.ndarray) -> np.ndarray:
    """4-neighbour discrete Laplacian (sum of neighbours - 4 * centre) with edge replication."""
    p = np.pad(x, [(1, 1), (1, 1)] + [(0, 0)] * (x.ndim - 2), mode="edge")
    return p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4 * x


def _check_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask is empty")
    if mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any():
        raise ValueError("mask must not touch the image border")
    return mask


def poisson_blend(patch: np.ndarray, target: np.ndarray, mask: np.ndarray, rtol: float = 1e-4,
                  max_iter: int | None = None) -> np.ndarray:
    """Solve Lap(f) = Lap(patch) inside ``mask`` with f = target outside it.

    Returns the full composited image (float, unclipped). The linear system is
    solved with conjugate gradients to ``rtol`` of the initial residual.
    """
    mask = _check_mask(mask)
    patch = np.asarray(patch, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if patch.shape != target.shape or patch.shape[:2] != mask.shape:
        raise ValueError("patch, target and mask must share spatial shape")
    h, w = mask.shape
    max_iter = max_iter or 10 * (h + w)

    index = -np.ones(mask.shape, dtype=np.int64)
    ys, xs = np.nonzero(mask)
    n = len(ys)
    index[ys, xs] = np.arange(n)
    rows, cols = [np.arange(n)], [np.arange(n)]
    vals = [np.full(n, 4.0)]
    squeeze = patch.ndim == 2
    if squeeze:
        patch, target = patch[..., None], target[..., None]
    rhs = -laplacian(patch)[ys, xs]
    for dy, dx in NEIGHBOURS:
        ny, nx = ys + dy, xs + dx
        inner = mask[ny, nx]
        rows.append(np.arange(n)[inner])
        cols.append(index[ny[inner], nx[inner]])
        vals.append(-np.ones(inner.sum()))
        rhs[~inner] += target[ny[~inner], nx[~inner]]
    a = scipy.sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))

    out = target.copy()
    for ch in range(patch.shape[2]):
        b = rhs[:, ch]
        if not np.any(b):
            out[ys, xs, ch] = 0.0
            continue
        sol, info = cg(a, b, rtol=rtol, atol=0.0, maxiter=max_iter)
        if info != 0:
            raise SolverError(f"Poisson solve did not converge in {max_iter} iterations (channel {ch})")
        out[ys, xs, ch] = sol
    return out[..., 0] if squeeze else out


def poisson_residual(result: np.ndarray, patch: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """|Lap(result) - Lap(patch)| at every masked pixel."""
    return np.abs(laplacian(result) - laplacian(np.asarray(patch, dtype=np.float64)))[np.asarray(mask, bool)]


def diffusion_fill(image: np.ndarray, mask: np.ndarray, tol: float = 1e-4, max_iter: int | None = None) -> np.ndarray:
    """Fill ``mask`` by repeated 4-neighbour averaging until the largest update is below ``tol``."""
    mask = np.asarray(mask, dtype=bool)
    if mask.all():
        raise ValueError("region covers the whole image; nothing to diffuse from")
    if not mask.any():
        return np.asarray(image, dtype=np.float64).copy()
    out = np.asarray(image, dtype=np.float64).copy()
    h, w = mask.shape
    max_iter = max_iter or 200 * (h + w)
    ring = ~mask & (laplacian(mask.astype(float)) != 0)
    # warm start from the mean of the boundary ring
    out[mask] = out[ring].mean(axis=0)
    for _ in range(max_iter):
        p = np.pad(out, [(1, 1), (1, 1)] + [(0, 0)] * (out.ndim - 2), mode="edge")
        avg = (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]) / 4
        change = np.abs(avg[mask] - out[mask]).max()
        out[mask] = avg[mask]
        if change < tol:
            return out
    raise SolverError(f"diffusion fill did not settle within {max_iter} iterations")


def diffusion_residual(result: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.abs(laplacian(result))[np.asarray(mask, bool)]
