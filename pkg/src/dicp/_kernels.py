"""Hot inner loops, compiled with numba when available.

Two kernels dominate runtime: casting a raster of rays against every scene
rectangle, and folding per-correspondence Jacobian rows into the 6x6 normal
equations.  Each has a numba implementation and a pure-numpy one with the
same signature.  The numba path is used when numba imports and the
environment variable ``DICP_DISABLE_NUMBA`` is unset (or ``0``).

Both implementations visit rectangles and rows in index order, so ties and
summation order are the same on either path.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("DICP_DISABLE_NUMBA", "0").lower() in ("", "0", "false", "no")


# ---------------------------------------------------------------------------
# ray / rectangle intersection
# ---------------------------------------------------------------------------

def raycast_numpy(origin, dirs, corners, normals, dual1, dual2, max_range):
    """Nearest rectangle hit per ray.

    Returns ``(t, ids)``: hit distance (``inf`` on a miss) and rectangle index
    (``-1`` on a miss).  Ties go to the lowest rectangle index.
    """
    m = dirs.shape[0]
    best_t = np.full(m, np.inf)
    best_id = np.full(m, -1, dtype=np.int64)
    for k in range(corners.shape[0]):
        n = normals[k]
        denom = dirs @ n
        oc = corners[k] - origin
        num = oc @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        ok = (np.abs(denom) > 1e-12 * np.sqrt(n @ n)) & (t > 1e-9) & (t <= max_range) & (t < best_t)
        if not ok.any():
            continue
        rel = origin - corners[k] + t[ok, None] * dirs[ok]
        a = rel @ dual1[k]
        b = rel @ dual2[k]
        inside = (a >= 0.0) & (a <= 1.0) & (b >= 0.0) & (b <= 1.0)
        idx = np.flatnonzero(ok)[inside]
        best_t[idx] = t[idx]
        best_id[idx] = k
    return best_t, best_id


def _raycast_loop(origin, dirs, corners, normals, dual1, dual2, max_range):
    m = dirs.shape[0]
    nk = corners.shape[0]
    best_t = np.full(m, np.inf)
    best_id = np.full(m, -1, dtype=np.int64)
    for i in range(m):
        dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        for k in range(nk):
            nx, ny, nz = normals[k, 0], normals[k, 1], normals[k, 2]
            denom = dx * nx + dy * ny + dz * nz
            if abs(denom) <= 1e-12 * np.sqrt(nx * nx + ny * ny + nz * nz):
                continue
            ox = corners[k, 0] - origin[0]
            oy = corners[k, 1] - origin[1]
            oz = corners[k, 2] - origin[2]
            t = (ox * nx + oy * ny + oz * nz) / denom
            if t <= 1e-9 or t > max_range or t >= best_t[i]:
                continue
            rx = origin[0] - corners[k, 0] + t * dx
            ry = origin[1] - corners[k, 1] + t * dy
            rz = origin[2] - corners[k, 2] + t * dz
            a = rx * dual1[k, 0] + ry * dual1[k, 1] + rz * dual1[k, 2]
            if a < 0.0 or a > 1.0:
                continue
            b = rx * dual2[k, 0] + ry * dual2[k, 1] + rz * dual2[k, 2]
            if b < 0.0 or b > 1.0:
                continue
            best_t[i] = t
            best_id[i] = k
    return best_t, best_id


# ---------------------------------------------------------------------------
# normal equation accumulation
# ---------------------------------------------------------------------------

def accumulate_numpy(Jp, rp, wp, Jv, rv, wv, lam):
    """``H = sum (1-lam) wp Jp Jp^T + lam wv Jv Jv^T``, ``g = -sum (...) J r``."""
    cp = (1.0 - lam) * wp
    cv = lam * wv
    H = np.einsum("ni,nj->ij", cp[:, None] * Jp, Jp) + np.einsum("ni,nj->ij", cv[:, None] * Jv, Jv)
    g = -(np.einsum("ni,n->i", Jp, cp * rp) + np.einsum("ni,n->i", Jv, cv * rv))
    iu = np.triu_indices(6, 1)
    H[(iu[1], iu[0])] = H[iu]
    return H, g


def _accumulate_loop(Jp, rp, wp, Jv, rv, wv, lam):
    H = np.zeros((6, 6))
    g = np.zeros(6)
    for n in range(Jp.shape[0]):
        cp = (1.0 - lam) * wp[n]
        cv = lam * wv[n]
        if cp != 0.0:
            for i in range(6):
                a = cp * Jp[n, i]
                g[i] -= a * rp[n]
                for j in range(i, 6):
                    H[i, j] += a * Jp[n, j]
        if cv != 0.0:
            for i in range(6):
                a = cv * Jv[n, i]
                g[i] -= a * rv[n]
                for j in range(i, 6):
                    H[i, j] += a * Jv[n, j]
    for i in range(6):
        for j in range(i + 1, 6):
            H[j, i] = H[i, j]
    return H, g


if HAVE_NUMBA:
    raycast_numba = njit(cache=True)(_raycast_loop)
    accumulate_numba = njit(cache=True)(_accumulate_loop)
else:  # pragma: no cover
    raycast_numba = None
    accumulate_numba = None


def raycast(origin, dirs, corners, normals, dual1, dual2, max_range):
    fn = raycast_numba if USE_NUMBA else raycast_numpy
    return fn(
        np.ascontiguousarray(origin, dtype=np.float64),
        np.ascontiguousarray(dirs, dtype=np.float64),
        np.ascontiguousarray(corners, dtype=np.float64),
        np.ascontiguousarray(normals, dtype=np.float64),
        np.ascontiguousarray(dual1, dtype=np.float64),
        np.ascontiguousarray(dual2, dtype=np.float64),
        float(max_range),
    )


def accumulate_rows(Jp, rp, wp, Jv, rv, wv, lam):
    fn = accumulate_numba if USE_NUMBA else accumulate_numpy
    return fn(
        np.ascontiguousarray(Jp, dtype=np.float64),
        np.ascontiguousarray(rp, dtype=np.float64),
        np.ascontiguousarray(wp, dtype=np.float64),
        np.ascontiguousarray(Jv, dtype=np.float64),
        np.ascontiguousarray(rv, dtype=np.float64),
        np.ascontiguousarray(wv, dtype=np.float64),
        float(lam),
    )
