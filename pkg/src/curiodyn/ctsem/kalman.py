"""Prediction-error-decomposition log likelihood of a CTSEM via the Kalman filter.

Each participant starts from the stationary distribution of its group's
latent process. Between observations the state moves by the exact discrete
transition for the actual interval; at each observation instant the
time-dependent predictors are added to the latent mean (impulse coding)
before the measurement update. Rows of ``y`` containing NaN are treated as
missing and only propagate the state.
"""
from __future__ import annotations

import math

import numba
import numpy as np

from ..errors import NonFiniteLikelihood, UnstableDrift
from .discretize import is_stable, stationary, transition_parts
from .model import CtsemDataset, CtsemModelSpec

LOG_2PI = math.log(2.0 * math.pi)


def group_system(spec: CtsemModelSpec, theta, dts) -> dict[str, np.ndarray]:
    """Per-group continuous and discretized matrices for the intervals ``dts``.

    Groups whose (A, Q) coincide share one discretization.
    """
    mats = spec.matrices(theta)
    n, ng, nu = spec.n_latent, spec.n_groups, len(dts)
    G = mats["G"]
    Q = G @ np.swapaxes(G, 1, 2)
    Ad = np.zeros((ng, nu, n, n))
    Kd = np.zeros((ng, nu, n, n))
    Qd = np.zeros((ng, nu, n, n))
    P0 = np.zeros((ng, n, n))
    cache = {}
    for g in range(ng):
        A = mats["A"][g]
        if not is_stable(A):
            raise UnstableDrift(f"group {spec.groups[g]}: drift is not stable")
        key = A.tobytes() + Q[g].tobytes()
        if key not in cache:
            ad = np.zeros((nu, n, n))
            kd = np.zeros((nu, n, n))
            qd = np.zeros((nu, n, n))
            for u, dt in enumerate(dts):
                if dt <= 0:
                    continue
                ad[u], kd[u], qd[u] = transition_parts(A, Q[g], dt)
            _, p0 = stationary(A, np.zeros(n), Q[g])
            cache[key] = (ad, kd, qd, p0)
        Ad[g], Kd[g], Qd[g], P0[g] = cache[key]
    return dict(mats, Q=Q, Ad=Ad, Kd=Kd, Qd=Qd, P0=P0)


def kalman_loglik(spec: CtsemModelSpec, data: CtsemDataset, theta=None) -> float:
    """Sum over participants of the Gaussian log likelihood of their observations."""
    if theta is None:
        theta = spec.initial_theta()
    if len(data) == 0:
        return 0.0
    data.check_against(spec)
    packed = data.packed
    try:
        sysm = group_system(spec, theta, packed.dts)
    except (UnstableDrift, np.linalg.LinAlgError, ValueError) as exc:
        raise NonFiniteLikelihood(str(exc)) from exc
    gindex = {g: i for i, g in enumerate(spec.groups)}
    pgroup = np.array([gindex[g] for g in packed.group_labels], dtype=np.int64)

    # continuous intercept per participant: xi + B z
    xi = sysm["xi"][:, :, 0]
    b = xi[pgroup] + np.einsum("pij,pj->pi", sysm["B"][pgroup], packed.z)
    mu0 = -np.linalg.solve(sysm["A"][pgroup], b[..., None])[..., 0]
    Z = sysm["zeta"]
    R = Z @ np.swapaxes(Z, 1, 2)

    ll = _filter(packed.y, packed.chi, packed.dt_index, packed.starts, pgroup,
                 np.ascontiguousarray(mu0), sysm["P0"], sysm["Ad"], sysm["Kd"], sysm["Qd"],
                 np.ascontiguousarray(b), np.ascontiguousarray(sysm["M"]),
                 np.ascontiguousarray(sysm["Lambda"]), np.ascontiguousarray(R))
    if not math.isfinite(ll):
        raise NonFiniteLikelihood("log likelihood is not finite")
    return float(ll)


@numba.njit(cache=False)
def _filter(y, chi, dt_index, starts, pgroup, mu0, P0, Ad, Kd, Qd, b, M, Lam, R):
    n_part = len(pgroup)
    n = mu0.shape[1]
    m = y.shape[1]
    p = chi.shape[1]
    x = np.empty(n)
    xn = np.empty(n)
    P = np.empty((n, n))
    T = np.empty((n, n))
    v = np.empty(m)
    w = np.empty(m)
    PLt = np.empty((n, m))
    K = np.empty((n, m))
    S = np.empty((m, m))
    L = np.empty((m, m))
    col = np.empty(m)
    ll = 0.0
    for i in range(n_part):
        g = pgroup[i]
        x[:] = mu0[i]
        P[:, :] = P0[g]
        for k in range(starts[i], starts[i + 1]):
            if k > starts[i]:
                u = dt_index[k]
                F = Ad[g, u]
                C = Kd[g, u]
                for a in range(n):
                    s = 0.0
                    for c in range(n):
                        s += F[a, c] * x[c] + C[a, c] * b[i, c]
                    xn[a] = s
                x[:] = xn
                # P <- F P F' + Qd
                for a in range(n):
                    for c in range(n):
                        s = 0.0
                        for r in range(n):
                            s += F[a, r] * P[r, c]
                        T[a, c] = s
                for a in range(n):
                    for c in range(a + 1):
                        s = Qd[g, u, a, c]
                        for r in range(n):
                            s += T[a, r] * F[c, r]
                        P[a, c] = s
                        P[c, a] = s
            for a in range(n):
                s = 0.0
                for c in range(p):
                    s += M[g, a, c] * chi[k, c]
                x[a] += s

            missing = False
            for j in range(m):
                if np.isnan(y[k, j]):
                    missing = True
            if missing:
                continue

            lam = Lam[g]
            for j in range(m):
                s = y[k, j]
                for c in range(n):
                    s -= lam[j, c] * x[c]
                v[j] = s
            for a in range(n):
                for j in range(m):
                    s = 0.0
                    for c in range(n):
                        s += P[a, c] * lam[j, c]
                    PLt[a, j] = s
            for j in range(m):
                for l in range(j + 1):
                    s = R[g, j, l]
                    for c in range(n):
                        s += lam[j, c] * PLt[c, l]
                    S[j, l] = s
                    S[l, j] = s
            # Cholesky S = L L'
            for j in range(m):
                s = S[j, j]
                for l in range(j):
                    s -= L[j, l] * L[j, l]
                if not s > 0.0:
                    return -np.inf
                L[j, j] = np.sqrt(s)
                for r in range(j + 1, m):
                    t = S[r, j]
                    for l in range(j):
                        t -= L[r, l] * L[j, l]
                    L[r, j] = t / L[j, j]
            logdet = 0.0
            for j in range(m):
                logdet += 2.0 * np.log(L[j, j])
            _chol_solve(L, v, w)
            quad = 0.0
            for j in range(m):
                quad += v[j] * w[j]
            ll += -0.5 * (m * LOG_2PI + logdet + quad)
            # K = PLt S^-1, row by row (S symmetric)
            for a in range(n):
                _chol_solve(L, PLt[a], col)
                for j in range(m):
                    K[a, j] = col[j]
            for a in range(n):
                s = 0.0
                for j in range(m):
                    s += K[a, j] * v[j]
                x[a] += s
            # P <- P - K PLt'
            for a in range(n):
                for c in range(a + 1):
                    s = P[a, c]
                    for j in range(m):
                        s -= K[a, j] * PLt[c, j]
                    P[a, c] = s
                    P[c, a] = s
    return ll


@numba.njit(cache=False)
def _chol_solve(L, rhs, out):
    m = L.shape[0]
    for j in range(m):
        s = rhs[j]
        for l in range(j):
            s -= L[j, l] * out[l]
        out[j] = s / L[j, j]
    for j in range(m - 1, -1, -1):
        s = out[j]
        for l in range(j + 1, m):
            s -= L[l, j] * out[l]
        out[j] = s / L[j, j]
