"""Exact discrete-time transition of the linear SDE ``d eta = (A eta + b) dt + G dW``."""
from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg

from ..errors import UnstableDrift, UnstableDriftWarning


def is_stable(A) -> bool:
    return bool(np.all(np.linalg.eigvals(np.atleast_2d(A)).real < 0))


def kron_sum(A) -> np.ndarray:
    """A (+) A = A x I + I x A, the generator of vec(P) under dP = AP + PA'."""
    n = A.shape[0]
    eye = np.eye(n)
    return np.kron(A, eye) + np.kron(eye, A)


def _augmented(A, dt: float):
    n = A.shape[0]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = A
    aug[:n, n:] = np.eye(n)
    E = scipy.linalg.expm(aug * dt)
    return E[:n, :n], E[:n, n:]


def drift_integral(A, dt: float) -> np.ndarray:
    """Integral of expm(A s) over [0, dt]; equals A^-1 (expm(A dt) - I) when A is invertible.

    Taken from the top-right block of an augmented exponential so singular
    drift needs no special case.
    """
    return _augmented(A, dt)[1]


def transition_parts(A, Q, dt: float):
    """``(A_d, K_d, Q_d)`` with ``K_d`` the drift integral; intercept_d = K_d @ xi."""
    Ad, Kd = _augmented(A, dt)
    return Ad, Kd, diffusion_covariance(A, Q, dt)


def diffusion_covariance(A, Q, dt: float) -> np.ndarray:
    """Q_d = int_0^dt expm(A s) Q expm(A' s) ds via the Kronecker-sum identity."""
    n = A.shape[0]
    ks = kron_sum(A)
    vec_q = np.asarray(Q, dtype=float).reshape(-1)
    try:
        if np.linalg.cond(ks) > 1e12:
            raise np.linalg.LinAlgError
        vec_qd = np.linalg.solve(ks, (scipy.linalg.expm(ks * dt) - np.eye(n * n)) @ vec_q)
    except np.linalg.LinAlgError:
        vec_qd = drift_integral(ks, dt) @ vec_q
    Qd = vec_qd.reshape(n, n)
    return 0.5 * (Qd + Qd.T)


def discretize(A, xi, Q, dt: float, *, warn: bool = True):
    """Return ``(A_d, intercept_d, Q_d)`` for an interval of length ``dt``.

    ``eta(t+dt) = A_d eta(t) + intercept_d + w``, ``w ~ N(0, Q_d)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    xi = np.asarray(xi, dtype=float).reshape(-1)
    if A.shape[0] != A.shape[1]:
        raise ValueError("drift matrix must be square")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if warn and not is_stable(A):
        warnings.warn("drift matrix has an eigenvalue with non-negative real part",
                      UnstableDriftWarning, stacklevel=2)
    Ad, Kd, Qd = transition_parts(A, Q, dt)
    return Ad, Kd @ xi, Qd


def stationary(A, xi, Q):
    """Stationary mean ``-A^-1 xi`` and covariance solving ``A P + P A' + Q = 0``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not is_stable(A):
        raise UnstableDrift("stationary distribution needs a stable drift matrix")
    mean = -np.linalg.solve(A, np.asarray(xi, dtype=float).reshape(-1))
    cov = scipy.linalg.solve_continuous_lyapunov(A, -np.atleast_2d(Q))
    return mean, 0.5 * (cov + cov.T)
