"""Synthetic data with known ground truth, for recovery and causality checks.

Latent paths use the same exact transition (``transition_parts``) as the
Kalman predict step, so a fit on simulated data is only subject to
estimation error, never integration error.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ctsem.discretize import is_stable, stationary, transition_parts
from .ctsem.model import CtsemDataset, CtsemModelSpec, ParticipantData
from .errors import ExplosiveSystem, UnstableDrift

VAR_BURN_IN = 100


@dataclass(frozen=True)
class SimConfig:
    """Settings for :func:`simulate_ctsem`.

    ``times`` are shared observation times (seconds) for every participant.
    Each time-dependent predictor fires (value 1) independently with
    probability ``impulse_prob`` at each observation. ``eta0`` overrides the
    stationary draw of the initial latent state.
    """

    spec: CtsemModelSpec
    n_participants: int
    times: tuple[float, ...]
    seed: int = 0
    impulse_prob: float = 0.2
    z: np.ndarray | None = None
    eta0: np.ndarray | None = None


def simulate_ctsem(cfg: SimConfig) -> CtsemDataset:
    """Draw ``n_participants`` per group from the true values stored in ``cfg.spec``."""
    spec = cfg.spec
    n = spec.n_latent
    times = np.asarray(cfg.times, dtype=float)
    gaps = np.diff(times)
    streams = np.random.SeedSequence(cfg.seed).spawn(spec.n_groups * cfg.n_participants)
    parts = []
    for g, label in enumerate(spec.groups):
        A = spec.values["A"][g]
        if not is_stable(A):
            raise UnstableDrift(f"group {label}: true drift is not stable")
        G = spec.values["G"][g]
        Q = G @ G.T
        Lam = spec.values["Lambda"][g]
        Z = spec.values["zeta"][g]
        M = spec.values["M"][g]
        steps = {dt: transition_parts(A, Q, dt) for dt in np.unique(gaps)}
        for j in range(cfg.n_participants):
            rng = np.random.default_rng(streams[g * cfg.n_participants + j])
            z = np.zeros(spec.n_tipred) if cfg.z is None else np.asarray(cfg.z, float)[g * cfg.n_participants + j]
            b = spec.values["xi"][g][:, 0] + spec.values["B"][g] @ z
            chi = (rng.random((len(times), spec.n_tdpred)) < cfg.impulse_prob).astype(float)
            eta = np.zeros((len(times), n))
            if cfg.eta0 is not None:
                eta[0] = cfg.eta0
            else:
                mean, cov = stationary(A, b, Q)
                eta[0] = rng.multivariate_normal(mean, cov, method="eigh")
            eta[0] += M @ chi[0]
            for k, dt in enumerate(gaps, start=1):
                Ad, Kd, Qd = steps[dt]
                noise = rng.multivariate_normal(np.zeros(n), Qd, method="eigh") if Q.any() else 0.0
                eta[k] = Ad @ eta[k - 1] + Kd @ b + noise + M @ chi[k]
            eps = rng.standard_normal((len(times), spec.n_manifest)) @ Z.T
            y = eta @ Lam.T + eps
            parts.append(ParticipantData(f"{label}-p{j}", label, times, y, chi, z))
    return CtsemDataset(tuple(parts))


def simulate_var(coeffs, T: int, seed: int = 0, noise_cov=None,
                 burn_in: int = VAR_BURN_IN) -> np.ndarray:
    """Gaussian VAR(p) realisation, shape ``(T, k)``.

    ``coeffs`` is ``(p, k, k)`` with ``coeffs[l][i, j]`` the effect of
    channel ``j`` at lag ``l+1`` on channel ``i``.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.ndim == 2:
        coeffs = coeffs[None]
    p, k, _ = coeffs.shape
    companion = np.zeros((p * k, p * k))
    companion[:k] = np.concatenate(list(coeffs), axis=1)
    companion[k:, :-k] = np.eye((p - 1) * k)
    if np.max(np.abs(np.linalg.eigvals(companion))) >= 1:
        raise ExplosiveSystem("VAR spectral radius is not below 1")
    cov = np.eye(k) if noise_cov is None else np.asarray(noise_cov, dtype=float)
    chol = np.linalg.cholesky(cov)
    rng = np.random.default_rng(seed)
    n = T + burn_in
    eps = rng.standard_normal((n, k)) @ chol.T
    x = np.zeros((n + p, k))
    for t in range(p, n + p):
        x[t] = eps[t - p]
        for lag in range(p):
            x[t] += coeffs[lag] @ x[t - lag - 1]
    return x[p + burn_in:]


# -- whole synthetic corpus in the ingestion file formats ----------------------

CORPUS_VERBAL = ("justification", "question_asking_on_task", "agreement")


def corpus_spec(groups, tdpred=CORPUS_VERBAL) -> CtsemModelSpec:
    """One latent curiosity process, one manifest rating, impulses from ``tdpred``.

    The latent scale is pinned by a fixed diffusion so loadings can vary by group.
    """
    p = len(tdpred)
    return CtsemModelSpec(
        n_latent=1, n_manifest=1, n_tdpred=p, groups=tuple(groups),
        values={"A": [[-0.3]], "G": [[0.5]], "xi": [[0.3]], "M": np.full((1, p), 0.4),
                "Lambda": [[1.0]], "zeta": [[0.4]]},
        masks={"A": "shared", "G": "fixed", "xi": "shared", "M": "shared",
               "Lambda": "group", "zeta": "shared"},
    )


def simulate_corpus(seed: int = 0, n_groups: int = 2, n_per_group: int = 3,
                    n_slices: int = 180, slice_width: float = 10.0, fps: float = 1.0,
                    n_raters: int = 4, hit_size: int = 6) -> dict:
    """Synthetic multimodal corpus as CSV-ready tables.

    Returns a dict with ``participants``, ``ratings``, ``frames``, ``speech``
    and ``verbal`` (each ``(header, rows)``) plus ``spec`` (a CTSEM spec
    document naming its predictor channels). Curiosity follows an OU
    process kicked by the participant's verbal behaviours; ratings are noisy
    copies of the discretized latent, and one rater per HIT rushes.
    """
    from . import io as cio  # local import: io depends on annotation/nonverbal only

    rng = np.random.default_rng(seed)
    groups = [f"G{g + 1}" for g in range(n_groups)]
    people = [(f"{g}P{j + 1}", g) for g in groups for j in range(n_per_group)]
    width_ms = int(slice_width * 1000)
    rate = np.array([0.15, 0.2, 0.25])

    verbal_rows, ratings_rows, frames_rows, speech_rows = [], [], [], []
    latent_a, latent_sd = -0.3, 0.5
    a_d = np.exp(latent_a * slice_width / 10.0)
    q_d = latent_sd ** 2 * (1 - a_d ** 2) / (-2 * latent_a)

    for pid, _ in people:
        acts = (rng.random((n_slices, len(CORPUS_VERBAL))) < rate).astype(int)
        for k in range(n_slices):
            for b, name in enumerate(CORPUS_VERBAL):
                verbal_rows.append((pid, k, name, int(acts[k, b])))
        eta = np.zeros(n_slices)
        for k in range(n_slices):
            prev = eta[k - 1] if k else rng.normal(0, np.sqrt(q_d / (1 - a_d ** 2)))
            eta[k] = a_d * prev + rng.normal(0, np.sqrt(q_d)) + 0.4 * acts[k].sum()
        truth = np.digitize(eta, [0.2, 0.8])

        raters = [f"R{pid}{r}" for r in range(n_raters)]
        for k in range(n_slices):
            hit = f"H{pid}-{k // hit_size}"
            for r, rid in enumerate(raters):
                label = truth[k] if rng.random() < 0.75 else int(rng.integers(0, 3))
                t = rng.uniform(2.0, 4.0) if r == n_raters - 1 else rng.normal(30.0, 3.0)
                ratings_rows.append((hit, k, pid, rid, int(label), round(float(max(t, 1.0)), 3)))

        n_frames = int(n_slices * slice_width * fps)
        for f in range(n_frames):
            ts = int(f * 1000 / fps)
            k = ts // width_ms
            boost = 0.25 if truth[k] == 2 else 0.1
            aus = (rng.random(len(cio.AU_COLUMNS)) < boost).astype(int)
            frames_rows.append((pid, ts, *aus.tolist(),
                                round(float(rng.normal(0, 0.1 + 0.05 * truth[k])), 5),
                                round(float(rng.normal(0, 0.15)), 5),
                                round(float(rng.normal(0, 0.05)), 5),
                                round(float(rng.uniform(0.6, 1.0)), 4)))

    for g in groups:
        members = [p for p, grp in people if grp == g]
        t, end = 0, n_slices * width_ms
        while t < end - 500:
            who = members[int(rng.integers(len(members)))]
            dur = int(rng.integers(800, 6000))
            stop = min(t + dur, end)
            speech_rows.append((who, t, stop))
            t = stop + int(rng.integers(50, 1500))

    spec = corpus_spec(groups)
    doc = spec.to_dict()
    doc["tdpred"] = list(CORPUS_VERBAL)
    return {
        "participants": (cio.PARTICIPANTS_COLUMNS, people),
        "ratings": (cio.RATINGS_COLUMNS, ratings_rows),
        "frames": (cio.FRAMES_COLUMNS, frames_rows),
        "speech": (cio.SPEECH_COLUMNS, speech_rows),
        "verbal": (cio.VERBAL_COLUMNS, verbal_rows),
        "spec": doc,
    }
