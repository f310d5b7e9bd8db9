"""Maximum-likelihood fitting and comparison of multiple-group CTSEMs."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from ..errors import DataMismatch, NonFiniteLikelihood
from .discretize import stationary
from .kalman import kalman_loglik
from .model import FIXED, CtsemDataset, CtsemModelSpec

logger = logging.getLogger(__name__)

N_RESTARTS = 5
JITTER = 0.2
PENALTY = 1e10


@dataclass
class CtsemFit:
    spec: CtsemModelSpec          # values hold the estimates
    theta: np.ndarray             # raw (unconstrained) optimum
    log_likelihood: float
    standard_errors: np.ndarray   # natural scale; NaN where the Hessian is not PD
    converged: bool
    n_evaluations: int
    data_fingerprint: str
    restart_loglik: list = field(default_factory=list)

    @property
    def n_free(self) -> int:
        return self.spec.n_free

    @property
    def aic(self) -> float:
        return 2.0 * self.n_free - 2.0 * self.log_likelihood

    @property
    def estimates(self) -> dict[str, float]:
        return dict(zip(self.spec.param_names, self.spec.natural(self.theta).tolist()))

    @property
    def per_group_lambda(self) -> np.ndarray:
        return np.array(self.spec.values["Lambda"])

    def to_dict(self) -> dict:
        std = standardized_loadings(self)
        return {
            "log_likelihood": self.log_likelihood,
            "aic": self.aic,
            "n_free": self.n_free,
            "converged": self.converged,
            "n_evaluations": self.n_evaluations,
            "data_fingerprint": self.data_fingerprint,
            "estimates": self.estimates,
            "standard_errors": dict(zip(self.spec.param_names,
                                        [None if math.isnan(s) else s
                                         for s in self.standard_errors.tolist()])),
            "per_group_lambda": {g: self.per_group_lambda[i].tolist()
                                 for i, g in enumerate(self.spec.groups)},
            "standardized_loadings": {
                "per_group": {g: std.per_group[i].tolist() for i, g in enumerate(self.spec.groups)},
                "mean": std.mean.tolist(),
                "sd": std.sd.tolist(),
            },
            "spec": self.spec.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass(frozen=True)
class ModelComparison:
    aic_constrained: float
    aic_free: float

    @property
    def delta_aic(self) -> float:
        """AIC(free) - AIC(constrained); positive favours the constrained model."""
        return self.aic_free - self.aic_constrained

    @property
    def preferred(self) -> str:
        return "constrained" if self.aic_constrained <= self.aic_free else "free"


@dataclass(frozen=True)
class StandardizedLoadings:
    per_group: np.ndarray   # (n_groups, n_manifest, n_latent)
    mean: np.ndarray
    sd: np.ndarray


def default_start(spec: CtsemModelSpec) -> CtsemModelSpec:
    """Generic starting values for every free entry; fixed entries kept."""
    vals = {k: np.array(v) for k, v in spec.values.items()}
    n = spec.n_latent
    generic = {
        "A": -np.eye(n), "B": np.zeros(spec.shape_of("B")), "M": np.zeros(spec.shape_of("M")),
        "G": np.eye(n), "xi": np.zeros((n, 1)), "Lambda": np.ones(spec.shape_of("Lambda")),
        "zeta": np.eye(spec.n_manifest),
    }
    for name, start in generic.items():
        free = spec.masks[name] != FIXED
        vals[name][:, free] = start[free]
    return CtsemModelSpec(spec.n_latent, spec.n_manifest, spec.n_tdpred, spec.n_tipred,
                          spec.groups, vals, dict(spec.masks))


def _objective(spec, data):
    counter = {"n": 0}

    def neg_ll(theta):
        counter["n"] += 1
        try:
            return -kalman_loglik(spec, data, theta)
        except NonFiniteLikelihood:
            return PENALTY
    return neg_ll, counter


def _jittered(spec: CtsemModelSpec, theta0, rng) -> np.ndarray:
    nat = spec.natural(theta0)
    nat = nat * rng.uniform(1 - JITTER, 1 + JITTER, size=nat.shape)
    return np.array([p.to_raw(v) for p, v in zip(spec.free_params, nat)])


def hessian(f, x, step: float = 1e-4) -> np.ndarray:
    """Central-difference Hessian of a scalar function."""
    x = np.asarray(x, dtype=float)
    k = len(x)
    h = step * np.maximum(1.0, np.abs(x))
    H = np.zeros((k, k))
    f0 = f(x)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(k)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej)
                                 + f(x - ei - ej)) / (4 * h[i] * h[j])
    return H


def _standard_errors(spec, neg_ll, theta) -> np.ndarray:
    H = hessian(neg_ll, theta)
    try:
        np.linalg.cholesky(H)
        cov = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        return np.full(len(theta), np.nan)
    se_raw = np.sqrt(np.diag(cov))
    return np.abs([p.dnatural_draw(t) for p, t in zip(spec.free_params, theta)]) * se_raw


def fit(spec: CtsemModelSpec, data: CtsemDataset, init: str | np.ndarray = "default",
        n_restarts: int = N_RESTARTS, seed: int = 0, maxiter: int = 2000,
        standard_errors: bool = True) -> CtsemFit:
    """Maximise the Kalman log likelihood from ``n_restarts`` starts.

    ``init`` is ``"default"`` (generic values), ``"spec"`` (the values stored
    in ``spec``) or a raw theta vector. The first start is used as given and
    the rest are multiplicatively jittered by up to 20%. A model with no
    parameter shared between groups is fitted group by group, which reaches
    the same optimum at a fraction of the cost.
    """
    if len(data) == 0:
        raise ValueError("cannot fit an empty dataset")
    spec.check_identified()
    data.check_against(spec)
    if spec.separable:
        return _fit_separable(spec, data, init, n_restarts, seed, maxiter, standard_errors)

    if isinstance(init, str):
        base = default_start(spec) if init == "default" else spec
        theta0 = base.initial_theta()
    else:
        theta0 = np.asarray(init, dtype=float)
    neg_ll, counter = _objective(spec, data)
    rng = np.random.default_rng(seed)
    best, lls, any_converged = None, [], False
    for r in range(max(1, n_restarts)):
        start = theta0 if r == 0 else _jittered(spec, theta0, rng)
        res = minimize(neg_ll, start, method="L-BFGS-B",
                       options={"maxiter": maxiter, "maxfun": 50 * maxiter})
        lls.append(-float(res.fun))
        any_converged |= bool(res.success)
        logger.debug("restart %d: loglik %.6f (%s)", r, -res.fun, res.message)
        if best is None or res.fun < best.fun:
            best = res
    ll = -float(best.fun)
    if ll <= -PENALTY / 2:
        raise NonFiniteLikelihood("no start produced a finite likelihood")
    se = (_standard_errors(spec, neg_ll, best.x) if standard_errors
          else np.full(spec.n_free, np.nan))
    if not best.success:
        logger.warning("best start did not converge: %s", best.message)
    return CtsemFit(spec.with_theta(best.x), np.asarray(best.x), ll, se,
                    bool(best.success), counter["n"], data.fingerprint(), lls)


def _fit_separable(spec, data, init, n_restarts, seed, maxiter, standard_errors) -> CtsemFit:
    parts = []
    for g, label in enumerate(spec.groups):
        sub_spec = spec.for_group(g)
        sub_init = init if isinstance(init, str) else None
        if sub_init is None:
            idx = [i for i, p in enumerate(spec.free_params) if p.groups == (g,)]
            sub_init = np.asarray(init, dtype=float)[idx]
        parts.append(fit(sub_spec, data.subset([label]), sub_init, n_restarts,
                         seed + g, maxiter, standard_errors))
    # reassemble in the parent's parameter order
    theta = np.zeros(spec.n_free)
    se = np.zeros(spec.n_free)
    cursor = [0] * spec.n_groups
    for i, p in enumerate(spec.free_params):
        g = p.groups[0]
        theta[i] = parts[g].theta[cursor[g]]
        se[i] = parts[g].standard_errors[cursor[g]]
        cursor[g] += 1
    return CtsemFit(spec.with_theta(theta), theta,
                    float(sum(f.log_likelihood for f in parts)), se,
                    all(f.converged for f in parts),
                    sum(f.n_evaluations for f in parts), data.fingerprint(),
                    [f.log_likelihood for f in parts])


def compare_models(fit_constrained: CtsemFit, fit_free: CtsemFit) -> ModelComparison:
    """AIC comparison; ties favour the constrained (smaller) model."""
    if fit_constrained.data_fingerprint != fit_free.data_fingerprint:
        raise DataMismatch("models were fitted to different data")
    return ModelComparison(fit_constrained.aic, fit_free.aic)


def standardized_loadings(fit: CtsemFit) -> StandardizedLoadings:
    """Loadings scaled by latent stationary SD over manifest total SD, per group.

    The SD across groups uses ``ddof=0`` so a single group reports 0.
    """
    spec = fit.spec
    out = np.zeros((spec.n_groups, spec.n_manifest, spec.n_latent))
    for g in range(spec.n_groups):
        A = spec.values["A"][g]
        G = spec.values["G"][g]
        Z = spec.values["zeta"][g]
        Lam = spec.values["Lambda"][g]
        _, cov = stationary(A, np.zeros(spec.n_latent), G @ G.T)
        y_var = np.diag(Lam @ cov @ Lam.T + Z @ Z.T)
        out[g] = Lam * np.sqrt(np.diag(cov))[None, :] / np.sqrt(y_var)[:, None]
    return StandardizedLoadings(out, out.mean(axis=0), out.std(axis=0))
