"""Multiple-group CTSEM specification and dataset containers.

Structural part::

    d eta(t) = (A eta(t) + B z + xi) dt + G dW(t),   plus impulses M chi(t_k)

Measurement part::

    y(t_k) = Lambda eta(t_k) + zeta(t_k),   zeta ~ N(0, Z Z')

Every matrix entry carries a mask: ``"shared"`` (one free value for all
groups), ``"group"`` (free, one value per group) or ``"fixed"`` (held at the
value stored for each group). Free entries are optimised on an unconstrained
scale: drift diagonals are ``-softplus(raw)`` and the diagonals of the
Cholesky factors ``G`` and ``Z`` are ``softplus(raw)``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from ..errors import DimensionMismatch, SpecError

MATRICES = ("A", "B", "M", "G", "xi", "Lambda", "zeta")
SHARED, GROUP, FIXED = "shared", "group", "fixed"


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    y = np.asarray(y, dtype=float)
    return np.where(y > 30, y, np.log(np.expm1(np.maximum(y, 1e-300))))


@dataclass(frozen=True)
class FreeParam:
    matrix: str
    row: int
    col: int
    groups: tuple[int, ...]
    transform: str  # "identity" | "neg_softplus" | "softplus"

    def label(self, group_labels: Sequence[str]) -> str:
        name = f"{self.matrix}[{self.row},{self.col}]"
        if len(self.groups) == 1 and len(group_labels) > 1:
            name += f"@{group_labels[self.groups[0]]}"
        return name

    def to_natural(self, raw):
        if self.transform == "neg_softplus":
            return -softplus(raw)
        if self.transform == "softplus":
            return softplus(raw)
        return raw

    def to_raw(self, natural):
        if self.transform == "neg_softplus":
            return softplus_inv(-min(natural, -1e-8))
        if self.transform == "softplus":
            return softplus_inv(max(abs(natural), 1e-8))
        return natural

    def dnatural_draw(self, raw) -> float:
        if self.transform == "identity":
            return 1.0
        s = 1.0 / (1.0 + np.exp(-raw))
        return -s if self.transform == "neg_softplus" else s


@dataclass(frozen=True)
class CtsemModelSpec:
    """Model dimensions, per-group parameter values and masks.

    ``values[name]`` has shape ``(n_groups, rows, cols)`` and serves as the
    starting point of a fit (or the truth for simulation); ``masks[name]`` is
    a ``(rows, cols)`` array of ``"shared"``, ``"group"`` or ``"fixed"``.
    ``xi`` is stored as a column (``n_latent x 1``).
    """

    n_latent: int
    n_manifest: int
    n_tdpred: int = 0
    n_tipred: int = 0
    groups: tuple[str, ...] = ("g0",)
    values: dict = field(default_factory=dict)
    masks: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(str(g) for g in self.groups))
        vals, masks = {}, {}
        for name in MATRICES:
            shape = self.shape_of(name)
            v = self.values.get(name)
            v = np.zeros(shape) if v is None else np.asarray(v, dtype=float)
            if v.shape == shape:
                v = np.broadcast_to(v, (self.n_groups, *shape))
            elif v.shape == (shape[0],) and name == "xi":
                v = np.broadcast_to(v[:, None], (self.n_groups, *shape))
            if v.shape != (self.n_groups, *shape):
                raise DimensionMismatch(
                    f"{name}: expected {shape} or {(self.n_groups, *shape)}, got {v.shape}")
            v = np.array(v)
            v.setflags(write=False)
            vals[name] = v
            m = self.masks.get(name, FIXED)
            m = np.array(np.broadcast_to(np.asarray(m, dtype=object), shape), dtype=object)
            bad = {x for x in m.ravel() if x not in (SHARED, GROUP, FIXED)}
            if bad:
                raise SpecError(f"{name}: unknown mask entries {bad}")
            if name in ("G", "zeta"):
                for i, j in zip(*np.triu_indices(shape[0], 1)):
                    m[i, j] = FIXED
                    if np.any(v[:, i, j] != 0):
                        raise SpecError(f"{name} is lower-triangular; [{i},{j}] must be 0")
            m.setflags(write=False)
            masks[name] = m
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "masks", masks)

    # -- shapes -----------------------------------------------------------
    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def shape_of(self, name: str) -> tuple[int, int]:
        n, m = self.n_latent, self.n_manifest
        return {"A": (n, n), "B": (n, self.n_tipred), "M": (n, self.n_tdpred),
                "G": (n, n), "xi": (n, 1), "Lambda": (m, n), "zeta": (m, m)}[name]

    def check_identified(self):
        """Raise :class:`SpecError` unless every latent has its scale pinned."""
        lam, lam_mask = self.values["Lambda"], self.masks["Lambda"]
        for j in range(self.n_latent):
            by_loading = any(lam_mask[i, j] == FIXED and np.all(lam[:, i, j] != 0)
                             for i in range(self.n_manifest))
            by_diffusion = self.masks["G"][j, j] == FIXED and np.all(self.values["G"][:, j, j] != 0)
            if not (by_loading or by_diffusion):
                raise SpecError(
                    f"latent {j} has no fixed scale: fix a nonzero loading in its "
                    f"Lambda column or fix its diffusion diagonal G[{j},{j}]")

    # -- free parameter table ------------------------------------------------
    @cached_property
    def free_params(self) -> tuple[FreeParam, ...]:
        out = []
        for name in MATRICES:
            mask = self.masks[name]
            rows, cols = self.shape_of(name)
            for i in range(rows):
                for j in range(cols):
                    kind = mask[i, j]
                    if kind == FIXED:
                        continue
                    if name == "A" and i == j:
                        tr = "neg_softplus"
                    elif name in ("G", "zeta") and i == j:
                        tr = "softplus"
                    else:
                        tr = "identity"
                    if kind == SHARED:
                        out.append(FreeParam(name, i, j, tuple(range(self.n_groups)), tr))
                    else:
                        out.extend(FreeParam(name, i, j, (g,), tr) for g in range(self.n_groups))
        return tuple(out)

    @property
    def n_free(self) -> int:
        return len(self.free_params)

    @property
    def param_names(self) -> list[str]:
        return [p.label(self.groups) for p in self.free_params]

    def initial_theta(self) -> np.ndarray:
        """Raw parameter vector reproducing the stored values."""
        return np.array([p.to_raw(self.values[p.matrix][p.groups[0], p.row, p.col])
                         for p in self.free_params], dtype=float)

    def natural(self, theta) -> np.ndarray:
        return np.array([p.to_natural(t) for p, t in zip(self.free_params, theta)])

    def matrices(self, theta) -> dict[str, np.ndarray]:
        """Per-group natural-scale matrices, each ``(n_groups, rows, cols)``."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_free,):
            raise DimensionMismatch(f"theta has {theta.size} entries, spec has {self.n_free}")
        out = {k: np.array(v) for k, v in self.values.items()}
        for p, t in zip(self.free_params, theta):
            out[p.matrix][list(p.groups), p.row, p.col] = p.to_natural(t)
        return out

    # -- derived specs -----------------------------------------------------
    def with_theta(self, theta) -> "CtsemModelSpec":
        return replace(self, values=self.matrices(theta), masks=dict(self.masks))

    def with_masks(self, free_kind: dict[str, str] | str) -> "CtsemModelSpec":
        """Re-label every non-fixed entry; ``free_kind`` maps matrix -> shared/group."""
        masks = {}
        for name, m in self.masks.items():
            kind = free_kind if isinstance(free_kind, str) else free_kind.get(name, SHARED)
            masks[name] = np.where(m == FIXED, FIXED, kind).astype(object)
        return replace(self, values=dict(self.values), masks=masks)

    def constrained(self) -> "CtsemModelSpec":
        """Loadings free per group, every other free parameter shared."""
        return self.with_masks({"Lambda": GROUP})

    def unconstrained(self) -> "CtsemModelSpec":
        """Every free parameter estimated separately per group."""
        return self.with_masks(GROUP)

    def for_group(self, g: int) -> "CtsemModelSpec":
        vals = {k: v[g:g + 1] for k, v in self.values.items()}
        return replace(self, groups=(self.groups[g],), values=vals, masks=dict(self.masks))

    @property
    def separable(self) -> bool:
        """True when no free parameter links two groups."""
        return self.n_groups > 1 and all(len(p.groups) == 1 for p in self.free_params)

    # -- JSON --------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "n_latent": self.n_latent, "n_manifest": self.n_manifest,
            "n_tdpred": self.n_tdpred, "n_tipred": self.n_tipred,
            "groups": list(self.groups),
            "parameters": {
                name: {"values": self.values[name].tolist(),
                       "mask": self.masks[name].tolist()}
                for name in MATRICES
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CtsemModelSpec":
        params = doc.get("parameters", {})
        try:
            return cls(
                n_latent=int(doc["n_latent"]), n_manifest=int(doc["n_manifest"]),
                n_tdpred=int(doc.get("n_tdpred", 0)), n_tipred=int(doc.get("n_tipred", 0)),
                groups=tuple(doc.get("groups", ("g0",))),
                values={k: v["values"] for k, v in params.items() if "values" in v},
                masks={k: v["mask"] for k, v in params.items() if "mask" in v},
            )
        except KeyError as exc:
            raise SpecError(f"missing field {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "CtsemModelSpec":
        return cls.from_dict(json.loads(text))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass(frozen=True)
class ParticipantData:
    id: str
    group: str
    times: np.ndarray
    y: np.ndarray
    chi: np.ndarray | None = None
    z: np.ndarray | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float)
        y = y.reshape(len(times), -1)
        chi = np.zeros((len(times), 0)) if self.chi is None else np.asarray(self.chi, dtype=float)
        chi = chi.reshape(len(times), -1)
        z = np.zeros(0) if self.z is None else np.asarray(self.z, dtype=float).reshape(-1)
        if np.any(np.diff(times) <= 0):
            raise ValueError(f"{self.id}: observation times must be strictly increasing")
        if np.isnan(chi).any():
            raise ValueError(f"{self.id}: time-dependent predictors cannot be NaN")
        for name, arr in (("times", times), ("y", y), ("chi", chi), ("z", z)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class CtsemDataset:
    participants: tuple[ParticipantData, ...]

    def __post_init__(self):
        object.__setattr__(self, "participants", tuple(self.participants))

    def __len__(self):
        return len(self.participants)

    @property
    def groups(self) -> list[str]:
        return sorted({p.group for p in self.participants})

    @property
    def n_observations(self) -> int:
        return int(sum(np.sum(~np.isnan(p.y).any(axis=1)) for p in self.participants))

    def subset(self, groups: Sequence[str]) -> "CtsemDataset":
        keep = set(groups)
        return CtsemDataset(tuple(p for p in self.participants if p.group in keep))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for p in self.participants:
            h.update(f"{p.id}|{p.group}|".encode())
            for arr in (p.times, p.y, p.chi, p.z):
                h.update(np.ascontiguousarray(arr).tobytes())
                h.update(b"|")
        return h.hexdigest()

    def check_against(self, spec: CtsemModelSpec):
        unknown = {p.group for p in self.participants} - set(spec.groups)
        if unknown:
            raise DimensionMismatch(f"groups {sorted(unknown)} not in spec")
        for p in self.participants:
            if (p.y.shape[1] != spec.n_manifest or p.chi.shape[1] != spec.n_tdpred
                    or p.z.shape[0] != spec.n_tipred):
                raise DimensionMismatch(
                    f"{p.id}: y/chi/z widths {p.y.shape[1]}/{p.chi.shape[1]}/{p.z.shape[0]} "
                    f"vs spec {spec.n_manifest}/{spec.n_tdpred}/{spec.n_tipred}")
        self._check_level_identified(spec)

    def _check_level_identified(self, spec: CtsemModelSpec):
        """A free xi[i] and free B[i, j] cannot both be estimated when z[j] is an intercept.

        With either entry per group, z[j] only has to be constant within
        each group for the two to be confounded.
        """
        if not self.participants or spec.n_tipred == 0:
            return
        xi_mask, b_mask = spec.masks["xi"][:, 0], spec.masks["B"]
        for i, j in zip(*np.nonzero((b_mask != FIXED) & (xi_mask != FIXED)[:, None])):
            per_group = GROUP in (xi_mask[i], b_mask[i, j])
            scopes = ([[p for p in self.participants if p.group == g] for g in self.groups]
                      if per_group else [list(self.participants)])
            if all(np.ptp([p.z[j] for p in s]) == 0 for s in scopes):
                raise SpecError(f"xi[{i}] and B[{i},{j}] are not separately identified: "
                                f"z[{j}] is constant{' within each group' if per_group else ''}; "
                                f"fix one of them")

    @cached_property
    def packed(self) -> "PackedData":
        return PackedData.from_dataset(self)


@dataclass(frozen=True)
class PackedData:
    """Concatenated arrays for the compiled filter; ``dt_index`` refers to ``dts``."""

    y: np.ndarray
    chi: np.ndarray
    dt_index: np.ndarray
    dts: np.ndarray
    starts: np.ndarray
    group_labels: tuple[str, ...]
    z: np.ndarray

    @classmethod
    def from_dataset(cls, data: CtsemDataset) -> "PackedData":
        parts = data.participants
        if not parts:
            return cls(np.zeros((0, 0)), np.zeros((0, 0)), np.zeros(0, np.int64),
                       np.zeros(0), np.zeros(1, np.int64), (), np.zeros((0, 0)))
        gaps = np.concatenate([np.concatenate([[0.0], np.diff(p.times)]) for p in parts])
        dts, inverse = _merge_float_noise(gaps)
        # index 0 may be the placeholder 0.0 used for first observations
        return cls(
            y=np.ascontiguousarray(np.concatenate([p.y for p in parts])),
            chi=np.ascontiguousarray(np.concatenate([p.chi for p in parts])),
            dt_index=inverse.astype(np.int64),
            dts=dts,
            starts=np.concatenate([[0], np.cumsum([len(p.times) for p in parts])]).astype(np.int64),
            group_labels=tuple(p.group for p in parts),
            z=np.ascontiguousarray(np.array([p.z for p in parts], dtype=float)),
        )


def _merge_float_noise(values: np.ndarray, rtol: float = 1e-12):
    """Unique values, treating entries that differ only by round-off as equal."""
    order = np.argsort(values, kind="stable")
    srt = values[order]
    new_run = np.ones(len(srt), dtype=bool)
    new_run[1:] = np.diff(srt) > rtol * np.maximum(1.0, np.abs(srt[1:]))
    run_id = np.cumsum(new_run) - 1
    inverse = np.empty(len(values), dtype=np.int64)
    inverse[order] = run_id
    return srt[new_run], inverse
