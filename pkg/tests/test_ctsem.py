import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from curiodyn.ctsem import (CtsemDataset, CtsemModelSpec, ParticipantData, compare_models,
                            discretize, fit, kalman_loglik, standardized_loadings, stationary)
from curiodyn.ctsem.discretize import diffusion_covariance, drift_integral
from curiodyn.ctsem.estimate import CtsemFit, default_start, hessian
from curiodyn.ctsem.model import softplus, softplus_inv
from curiodyn.errors import (DataMismatch, DimensionMismatch, NonFiniteLikelihood, SpecError,
                             UnstableDrift, UnstableDriftWarning)
from curiodyn.simgen import SimConfig, simulate_ctsem

from oracles import (brute_force_loglik, ou_cov_quadrature, random_instance, random_stable,
                     stationary_cov_vec)


# -- discretization ---------------------------------------------------------

def test_zero_drift_gives_identity():
    Ad, b, Qd = discretize(np.zeros((2, 2)), [1.0, 2.0], np.eye(2), 1.0, warn=False)
    np.testing.assert_allclose(Ad, np.eye(2), atol=1e-15)
    # singular drift: intercept integrates to xi * dt, noise to Q * dt
    np.testing.assert_allclose(b, [1.0, 2.0], atol=1e-12)
    np.testing.assert_allclose(Qd, np.eye(2), atol=1e-12)


def test_scalar_closed_forms():
    Ad, b, Qd = discretize([[-1.0]], [1.0], [[1.0]], 1.0)
    assert Ad[0, 0] == pytest.approx(0.36787944117144233, abs=1e-12)
    assert Qd[0, 0] == pytest.approx((1 - math.exp(-2)) / 2, abs=1e-12)
    assert Qd[0, 0] == pytest.approx(0.43233235838169365, abs=1e-12)
    assert b[0] == pytest.approx(1 - math.exp(-1), abs=1e-12)


@given(st.floats(-3, -0.05), st.floats(0.01, 5), st.floats(0.01, 10))
def test_scalar_variance_formula(a, q, dt):
    Qd = diffusion_covariance(np.array([[a]]), np.array([[q]]), dt)[0, 0]
    assert Qd == pytest.approx((1 - math.exp(2 * a * dt)) * q / (-2 * a), rel=1e-10, abs=1e-14)


def test_unstable_drift_warns_not_raises():
    with pytest.warns(UnstableDriftWarning):
        discretize([[0.1]], [0.0], [[1.0]], 1.0)


def test_discretize_rejects_bad_input():
    with pytest.raises(ValueError):
        discretize(np.zeros((2, 3)), [0, 0], np.eye(2), 1.0)
    with pytest.raises(ValueError):
        discretize([[-1.0]], [0.0], [[1.0]], 0.0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 3.0))
def test_diffusion_matches_quadrature(seed, dt):
    rng = np.random.default_rng(seed)
    A = random_stable(rng, 3)
    Gm = np.tril(rng.normal(size=(3, 3)))
    Q = Gm @ Gm.T
    np.testing.assert_allclose(diffusion_covariance(A, Q, dt), ou_cov_quadrature(A, Q, dt),
                               atol=1e-9)


def test_drift_integral_singular_case():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    np.testing.assert_allclose(drift_integral(A, 2.0), [[2.0, 2.0], [0.0, 2.0]], atol=1e-12)


def test_stationary_moments():
    rng = np.random.default_rng(3)
    A = random_stable(rng, 3)
    Q = np.eye(3)
    mean, cov = stationary(A, [1.0, 0.0, -1.0], Q)
    np.testing.assert_allclose(A @ mean, [-1.0, 0.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(cov, stationary_cov_vec(A, Q), atol=1e-12)
    with pytest.raises(UnstableDrift):
        stationary([[0.5]], [0.0], [[1.0]])


def test_stationary_covariance_is_fixed_point_of_transition():
    rng = np.random.default_rng(4)
    A = random_stable(rng, 2)
    Q = np.array([[1.0, 0.3], [0.3, 0.5]])
    _, S = stationary(A, np.zeros(2), Q)
    Ad, _, Qd = discretize(A, np.zeros(2), Q, 0.7)
    np.testing.assert_allclose(Ad @ S @ Ad.T + Qd, S, atol=1e-12)


# -- model specification ----------------------------------------------------

def one_latent_spec(groups=("g0",), **kw):
    values = {"A": [[-0.5]], "G": [[1.0]], "Lambda": [[1.0]], "zeta": [[0.5]]}
    masks = {"A": "shared", "zeta": "shared"}
    values.update(kw.pop("values", {}))
    masks.update(kw.pop("masks", {}))
    return CtsemModelSpec(1, 1, groups=groups, values=values, masks=masks, **kw)


def test_spec_broadcasts_and_validates():
    spec = one_latent_spec(groups=("a", "b"))
    assert spec.values["A"].shape == (2, 1, 1)
    with pytest.raises(DimensionMismatch):
        CtsemModelSpec(2, 1, values={"A": [[1.0]]})
    with pytest.raises(SpecError):
        CtsemModelSpec(1, 1, masks={"A": "sometimes"})
    with pytest.raises(SpecError):
        CtsemModelSpec(2, 1, values={"G": [[1.0, 0.5], [0.0, 1.0]]})


def test_upper_triangle_of_diffusion_is_fixed():
    spec = CtsemModelSpec(2, 1, values={"G": np.eye(2), "Lambda": [[1.0, 1.0]]}, masks={"G": "shared"})
    assert spec.masks["G"][0, 1] == "fixed"
    assert [p.label(spec.groups) for p in spec.free_params] == ["G[0,0]", "G[1,0]", "G[1,1]"]


def test_identification_check():
    one_latent_spec().check_identified()
    loose = one_latent_spec(masks={"G": "shared", "Lambda": "shared"})
    with pytest.raises(SpecError):
        loose.check_identified()
    one_latent_spec(masks={"G": "shared"}).check_identified()


def test_free_parameter_table_and_transforms():
    spec = one_latent_spec(groups=("a", "b"), masks={"Lambda": "group", "G": "fixed"})
    assert spec.param_names == ["A[0,0]", "Lambda[0,0]@a", "Lambda[0,0]@b", "zeta[0,0]"]
    theta = spec.initial_theta()
    np.testing.assert_allclose(spec.natural(theta), [-0.5, 1.0, 1.0, 0.5])
    mats = spec.matrices(np.array([3.0, 0.7, 1.3, -2.0]))
    assert mats["A"][0, 0, 0] == pytest.approx(-softplus(3.0))
    assert mats["zeta"][1, 0, 0] == pytest.approx(softplus(-2.0))
    assert mats["Lambda"][:, 0, 0].tolist() == [0.7, 1.3]


@given(st.floats(1e-6, 50))
def test_softplus_round_trip(y):
    assert float(softplus(softplus_inv(y))) == pytest.approx(y, rel=1e-9)


def test_constrained_and_free_variants():
    spec = one_latent_spec(groups=("a", "b"), masks={"Lambda": "group", "xi": "shared"})
    assert spec.constrained().n_free == 1 + 2 + 1 + 1
    assert spec.unconstrained().n_free == 2 * 4
    assert spec.unconstrained().separable and not spec.constrained().separable


def test_json_round_trip():
    spec = one_latent_spec(groups=("a", "b"), masks={"Lambda": "group"})
    back = CtsemModelSpec.from_json(spec.to_json())
    assert back.param_names == spec.param_names
    for k in spec.values:
        np.testing.assert_array_equal(back.values[k], spec.values[k])
    with pytest.raises(SpecError):
        CtsemModelSpec.from_dict({"n_latent": 1})


def test_participant_data_validation():
    with pytest.raises(ValueError):
        ParticipantData("p", "g", [0, 2, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        ParticipantData("p", "g", [0, 1], [1, 2], chi=[[np.nan], [0]])


# -- likelihood -------------------------------------------------------------

def test_empty_dataset_loglik_is_zero():
    assert kalman_loglik(one_latent_spec(), CtsemDataset(())) == 0.0


def test_single_observation_is_univariate_normal():
    spec = one_latent_spec(values={"xi": [[0.4]], "Lambda": [[1.3]]})
    data = CtsemDataset((ParticipantData("p", "g0", [0.0], [0.9]),))
    mu0 = 0.4 / 0.5
    var0 = 1.0 / (2 * 0.5)
    expected = stats.norm(1.3 * mu0, math.sqrt(1.3 ** 2 * var0 + 0.25)).logpdf(0.9)
    assert kalman_loglik(spec, data) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000))
def test_matches_joint_gaussian(seed):
    spec, data = random_instance(np.random.default_rng(seed))
    assert kalman_loglik(spec, data) == pytest.approx(brute_force_loglik(spec, data), abs=1e-8)


def test_missing_rows_are_marginalised():
    rng = np.random.default_rng(11)
    spec, data = random_instance(rng, max_T=5)
    part = max(data.participants, key=lambda p: len(p.times))
    if len(part.times) < 3:
        pytest.skip("instance too short")
    y = np.array(part.y)
    y[1] = np.nan
    holed = ParticipantData(part.id, part.group, part.times, y, part.chi, part.z)
    # marginalise the joint Gaussian by deleting the missing row
    keep = [0] + list(range(2, len(part.times)))
    g = spec.groups.index(part.group)
    v = {k: spec.values[k][g] for k in spec.values}
    m = spec.n_manifest
    mean, cov = _joint_moments(v, part, spec.n_latent)
    idx = [k * m + j for k in keep for j in range(m)]
    expected = stats.multivariate_normal(mean[idx], cov[np.ix_(idx, idx)]).logpdf(
        part.y[keep].ravel())
    assert kalman_loglik(spec, CtsemDataset((holed,))) == pytest.approx(expected, abs=1e-8)


def _joint_moments(v, part, n):
    from scipy import linalg
    A, Gm = v["A"], v["G"]
    b = v["xi"][:, 0] + v["B"] @ part.z
    S = stationary_cov_vec(A, Gm @ Gm.T)
    T = len(part.times)
    mean = np.zeros((T, n))
    mean[0] = -np.linalg.solve(A, b) + v["M"] @ part.chi[0]
    for k in range(1, T):
        E = linalg.expm(A * (part.times[k] - part.times[k - 1]))
        mean[k] = E @ mean[k - 1] + np.linalg.solve(A, (E - np.eye(n)) @ b) + v["M"] @ part.chi[k]
    C = np.zeros((T * n, T * n))
    for j in range(T):
        for k in range(j, T):
            blk = S @ linalg.expm(A * (part.times[k] - part.times[j])).T
            C[j * n:(j + 1) * n, k * n:(k + 1) * n] = blk
            C[k * n:(k + 1) * n, j * n:(j + 1) * n] = blk.T
    L = np.kron(np.eye(T), v["Lambda"])
    R = v["zeta"] @ v["zeta"].T
    return (mean @ v["Lambda"].T).ravel(), L @ C @ L.T + np.kron(np.eye(T), R)


@given(st.permutations(range(4)))
def test_loglik_permutation_invariant(order):
    spec, data = random_instance(np.random.default_rng(5), n_participants=2)
    shuffled = CtsemDataset(tuple(data.participants[i] for i in order))
    assert kalman_loglik(spec, shuffled) == pytest.approx(kalman_loglik(spec, data), abs=1e-9)


def test_unstable_theta_is_non_finite():
    spec = CtsemModelSpec(1, 1, values={"A": [[0.2]], "G": [[1.0]], "Lambda": [[1.0]],
                                        "zeta": [[1.0]]})
    data = CtsemDataset((ParticipantData("p", "g0", [0, 1], [0, 1]),))
    with pytest.raises(NonFiniteLikelihood):
        kalman_loglik(spec, data)


def test_dimension_mismatch():
    spec = one_latent_spec()
    data = CtsemDataset((ParticipantData("p", "g0", [0, 1], [[0, 1], [1, 0]]),))
    with pytest.raises(DimensionMismatch):
        kalman_loglik(spec, data)


def test_level_and_constant_tipred_not_both_free():
    def data(zs, groups):
        return CtsemDataset(tuple(ParticipantData(f"p{k}", g, [0, 1], [[0.0], [1.0]], z=[z])
                                  for k, (z, g) in enumerate(zip(zs, groups))))

    spec = one_latent_spec(groups=("a", "b"), n_tipred=1,
                           masks={"xi": "shared", "B": "shared"})
    with pytest.raises(SpecError):
        data([1.0, 1.0], "ab").check_against(spec)
    data([1.0, 2.0], "ab").check_against(spec)
    per_group = spec.with_masks({"xi": "group", "B": "shared", "A": "shared", "zeta": "shared"})
    with pytest.raises(SpecError):
        data([1.0, 2.0], "ab").check_against(per_group)
    data([1.0, 2.0, 3.0], "aab").check_against(per_group)
    data([1.0, 1.0], "ab").check_against(one_latent_spec(groups=("a", "b"), n_tipred=1,
                                                         masks={"B": "shared"}))


# -- fitting ----------------------------------------------------------------

def small_truth(groups=("a", "b"), lam=(0.8, 1.3)):
    return CtsemModelSpec(
        1, 1, n_tdpred=1, groups=groups,
        values={"A": [[-0.6]], "G": [[1.0]], "xi": [[0.3]], "M": [[0.8]],
                "Lambda": np.array(lam).reshape(-1, 1, 1), "zeta": [[0.4]]},
        masks={"A": "shared", "xi": "shared", "M": "shared", "Lambda": "group",
               "zeta": "shared"})


@pytest.fixture(scope="module")
def small_fit():
    truth = small_truth()
    data = simulate_ctsem(SimConfig(truth, 3, tuple(range(80)), seed=7))
    return truth, data, fit(truth, data, n_restarts=2, seed=0)


def test_fit_beats_truth_and_aic_identity(small_fit):
    truth, data, f = small_fit
    assert f.log_likelihood >= kalman_loglik(truth, data) - 1e-6
    assert f.aic == 2 * f.n_free - 2 * f.log_likelihood
    assert f.converged
    assert len(f.restart_loglik) == 2


def test_fit_recovers_parameters_roughly(small_fit):
    _, _, f = small_fit
    est = f.estimates
    assert est["A[0,0]"] == pytest.approx(-0.6, abs=0.25)
    assert est["Lambda[0,0]@b"] > est["Lambda[0,0]@a"]
    assert np.all(np.isfinite(f.standard_errors))


def test_fit_is_deterministic(small_fit):
    truth, data, f = small_fit
    again = fit(truth, data, n_restarts=2, seed=0)
    assert again.to_json() == f.to_json()


def test_fit_report_shape(small_fit):
    _, _, f = small_fit
    doc = json.loads(f.to_json())
    assert set(doc["standardized_loadings"]) == {"per_group", "mean", "sd"}
    assert doc["aic"] == f.aic


def test_separable_fit_equals_per_group_fits():
    truth = small_truth()
    data = simulate_ctsem(SimConfig(truth, 2, tuple(range(40)), seed=2))
    free = truth.unconstrained()
    joint = fit(free, data, n_restarts=1, standard_errors=False)
    parts = [fit(free.for_group(g), data.subset([lab]), n_restarts=1, seed=g,
                 standard_errors=False) for g, lab in enumerate(free.groups)]
    assert joint.log_likelihood == pytest.approx(sum(p.log_likelihood for p in parts), abs=1e-9)
    assert joint.log_likelihood == pytest.approx(kalman_loglik(free, data, joint.theta), abs=1e-9)


def test_fit_rejects_unidentified_and_empty():
    loose = one_latent_spec(masks={"G": "shared", "Lambda": "shared"})
    data = CtsemDataset((ParticipantData("p", "g0", [0, 1], [0, 1]),))
    with pytest.raises(SpecError):
        fit(loose, data)
    with pytest.raises(ValueError):
        fit(one_latent_spec(), CtsemDataset(()))


def test_default_start_keeps_fixed_entries():
    spec = small_truth()
    start = default_start(spec)
    assert start.values["G"][0, 0, 0] == 1.0
    assert start.values["A"][0, 0, 0] == -1.0
    assert start.values["M"][0, 0, 0] == 0.0


def test_hessian_of_quadratic():
    H = hessian(lambda x: x[0] ** 2 + 3 * x[0] * x[1] + 2 * x[1] ** 2, np.array([0.3, -1.0]))
    np.testing.assert_allclose(H, [[2, 3], [3, 4]], atol=1e-5)


# -- comparison and standardization -----------------------------------------

def _fake_fit(spec, ll, fp="x"):
    return CtsemFit(spec, spec.initial_theta(), ll, np.full(spec.n_free, np.nan), True, 1, fp)


def test_compare_models_rules():
    c, f = small_truth().constrained(), small_truth().unconstrained()
    # 6 vs 10 free parameters: AIC 212 vs 214
    assert compare_models(_fake_fit(c, -100.0), _fake_fit(f, -97.0)).preferred == "constrained"
    assert compare_models(_fake_fit(c, -100.0), _fake_fit(f, -50.0)).preferred == "free"
    tie = compare_models(_fake_fit(c, -100.0), _fake_fit(f, -100.0 + (f.n_free - c.n_free)))
    assert tie.delta_aic == 0 and tie.preferred == "constrained"
    with pytest.raises(DataMismatch):
        compare_models(_fake_fit(c, -1.0, "x"), _fake_fit(f, -1.0, "y"))


def test_standardized_loadings_examples():
    single = standardized_loadings(_fake_fit(small_truth(groups=("a",), lam=(0.8,)), 0.0))
    assert single.sd.tolist() == [[0.0]]
    same = standardized_loadings(_fake_fit(small_truth(lam=(1.1, 1.1)), 0.0))
    assert same.sd[0, 0] == 0.0
    # stationary var of the latent is 1/(2*0.6); manifest var adds 0.16
    s2 = 1 / 1.2
    assert same.mean[0, 0] == pytest.approx(1.1 * math.sqrt(s2) / math.sqrt(1.21 * s2 + 0.16))


def test_standardization_rank_order_survives_rescaling():
    truth = small_truth(groups=("a", "b", "c"), lam=(0.6, 1.0, 1.5))
    data = simulate_ctsem(SimConfig(truth, 3, tuple(range(60)), seed=21))
    scaled = CtsemDataset(tuple(ParticipantData(p.id, p.group, p.times, 3.0 * p.y, p.chi, p.z)
                                for p in data.participants))
    a = standardized_loadings(fit(truth, data, n_restarts=1, standard_errors=False))
    b = standardized_loadings(fit(truth, scaled, n_restarts=1, standard_errors=False))
    assert np.argsort(a.per_group[:, 0, 0]).tolist() == np.argsort(b.per_group[:, 0, 0]).tolist()
    np.testing.assert_allclose(a.per_group, b.per_group, atol=1e-3)
