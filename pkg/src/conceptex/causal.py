"""Numeric verification of frontdoor and backdoor adjustment on discrete SCMs.

The graph is fixed: K -> X, X -> P, P -> S, K -> S, with K the unobserved
confounder, X the input, P the mediator (the prompt) and S the outcome span.
Ground truth comes from graph mutilation; the frontdoor estimator is only ever
handed the observational joint over (X, P, S), so it provably cannot peek at K.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_ROW_TOL = 1e-12


class UnsupportedConditioningError(ValueError):
    """Raised when an estimator would condition on a zero-probability event."""


def _check_rows(name: str, table: np.ndarray) -> None:
    if (table < 0).any():
        raise ValueError(f"{name} has negative entries")
    sums = table.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=_ROW_TOL):
        raise ValueError(f"{name} rows must sum to 1 (max deviation {np.abs(sums - 1).max():.3e})")


@dataclass(frozen=True)
class DiscreteSCM:
    """Fully specified categorical SCM over (K, X, P, S).

    prior_k: (K,)      P(K)
    cond_x:  (K, X)    P(X|K)
    cond_p:  (X, P)    P(P|X)
    cond_s:  (P, K, S) P(S|P,K)
    """

    prior_k: np.ndarray
    cond_x: np.ndarray
    cond_p: np.ndarray
    cond_s: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "prior_k", np.asarray(self.prior_k, dtype=float))
        object.__setattr__(self, "cond_x", np.asarray(self.cond_x, dtype=float))
        object.__setattr__(self, "cond_p", np.asarray(self.cond_p, dtype=float))
        object.__setattr__(self, "cond_s", np.asarray(self.cond_s, dtype=float))
        nk, nx = self.cond_x.shape
        nx2, np_ = self.cond_p.shape
        np2, nk2, _ = self.cond_s.shape
        if self.prior_k.shape != (nk,) or nx != nx2 or np_ != np2 or nk != nk2:
            raise ValueError("inconsistent table shapes")
        _check_rows("prior_k", self.prior_k)
        _check_rows("cond_x", self.cond_x)
        _check_rows("cond_p", self.cond_p)
        _check_rows("cond_s", self.cond_s)

    @property
    def sizes(self) -> dict[str, int]:
        return {
            "k": self.prior_k.shape[0],
            "x": self.cond_x.shape[1],
            "p": self.cond_p.shape[1],
            "s": self.cond_s.shape[2],
        }

    def to_json(self) -> dict:
        return {
            "domains": self.sizes,
            "prior_k": self.prior_k.tolist(),
            "cond_x": self.cond_x.tolist(),
            "cond_p": self.cond_p.tolist(),
            "cond_s": self.cond_s.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DiscreteSCM":
        return cls(
            prior_k=np.array(obj["prior_k"]),
            cond_x=np.array(obj["cond_x"]),
            cond_p=np.array(obj["cond_p"]),
            cond_s=np.array(obj["cond_s"]),
        )


@dataclass(frozen=True)
class ObservedJointXPS:
    """Observational joint over (X, P, S) only -- K is not representable here."""

    table: np.ndarray  # (X, P, S)

    def __post_init__(self) -> None:
        object.__setattr__(self, "table", np.asarray(self.table, dtype=float))
        if (self.table < 0).any():
            raise ValueError("joint has negative entries")
        if not np.isclose(self.table.sum(), 1.0, atol=1e-9):
            raise ValueError("joint must sum to 1")

    @classmethod
    def from_scm(cls, scm: DiscreteSCM) -> "ObservedJointXPS":
        return cls(observational_joint(scm).sum(axis=0))


@dataclass(frozen=True)
class ObservedJointKXS:
    """Observational joint over (K, X, S), for the backdoor estimator."""

    table: np.ndarray  # (K, X, S)

    def __post_init__(self) -> None:
        object.__setattr__(self, "table", np.asarray(self.table, dtype=float))
        if (self.table < 0).any():
            raise ValueError("joint has negative entries")
        if not np.isclose(self.table.sum(), 1.0, atol=1e-9):
            raise ValueError("joint must sum to 1")

    @classmethod
    def from_scm(cls, scm: DiscreteSCM) -> "ObservedJointKXS":
        return cls(observational_joint(scm).sum(axis=2))


def observational_joint(scm: DiscreteSCM) -> np.ndarray:
    """P(k,x,p,s) = P(k) P(x|k) P(p|x) P(s|p,k), as a (K,X,P,S) array."""
    return np.einsum("k,kx,xp,pks->kxps", scm.prior_k, scm.cond_x, scm.cond_p, scm.cond_s)


def interventional_truth(scm: DiscreteSCM, x: int) -> np.ndarray:
    """P(S | do(X=x)) on the mutilated graph: sum_k P(k) sum_p P(p|x) P(s|p,k)."""
    nx = scm.cond_x.shape[1]
    if not (0 <= x < nx):
        raise ValueError(f"x={x} outside domain of size {nx}")
    return np.einsum("k,p,pks->s", scm.prior_k, scm.cond_p[x], scm.cond_s)


def frontdoor_estimate(obs: ObservedJointXPS, x: int) -> np.ndarray:
    """Frontdoor adjustment from (X,P,S) observations only.

    sum_p P(p|x) * sum_x' P(s|p,x') P(x').
    """
    table = obs.table
    nx, np_, ns = table.shape
    if not (0 <= x < nx):
        raise ValueError(f"x={x} outside domain of size {nx}")
    p_x = table.sum(axis=(1, 2))
    p_xp = table.sum(axis=2)
    if p_x[x] <= 0:
        raise UnsupportedConditioningError(f"P(X={x}) = 0: cannot condition on X={x}")

    p_p_given_x = p_xp[x] / p_x[x]
    result = np.zeros(ns)
    for p in range(np_):
        if p_p_given_x[p] == 0:
            continue
        inner = np.zeros(ns)
        for x2 in range(nx):
            if p_x[x2] == 0:
                continue
            if p_xp[x2, p] == 0:
                raise UnsupportedConditioningError(
                    f"P(X={x2}, P={p}) = 0: cannot condition on (X={x2}, P={p})"
                )
            inner += (table[x2, p] / p_xp[x2, p]) * p_x[x2]
        result += p_p_given_x[p] * inner
    return result


def backdoor_estimate(obs: ObservedJointKXS, x: int) -> np.ndarray:
    """Backdoor adjustment with K observed: sum_k P(s|x,k) P(k)."""
    table = obs.table
    nk, nx, ns = table.shape
    if not (0 <= x < nx):
        raise ValueError(f"x={x} outside domain of size {nx}")
    p_k = table.sum(axis=(1, 2))
    p_kx = table.sum(axis=2)
    result = np.zeros(ns)
    for k in range(nk):
        if p_k[k] == 0:
            continue
        if p_kx[k, x] == 0:
            raise UnsupportedConditioningError(
                f"P(K={k}, X={x}) = 0: cannot condition on (X={x}, K={k})"
            )
        result += (table[k, x] / p_kx[k, x]) * p_k[k]
    return result


def random_scm(rng: np.random.Generator, min_size: int = 2, max_size: int = 5) -> DiscreteSCM:
    """Dirichlet-sampled SCM with domain sizes drawn from [min_size, max_size]."""
    nk, nx, np_, ns = (int(rng.integers(min_size, max_size + 1)) for _ in range(4))
    return DiscreteSCM(
        prior_k=rng.dirichlet(np.ones(nk)),
        cond_x=rng.dirichlet(np.ones(nx), size=nk),
        cond_p=rng.dirichlet(np.ones(np_), size=nx),
        cond_s=rng.dirichlet(np.ones(ns), size=(np_, nk)),
    )


def verify_identities(n_models: int, seed: int, min_size: int = 2, max_size: int = 5) -> dict:
    """Max |estimate - truth| for frontdoor and backdoor over random SCMs."""
    rng = np.random.default_rng(seed)
    max_fd = 0.0
    max_bd = 0.0
    for _ in range(n_models):
        scm = random_scm(rng, min_size, max_size)
        obs_xps = ObservedJointXPS.from_scm(scm)
        obs_kxs = ObservedJointKXS.from_scm(scm)
        for x in range(scm.sizes["x"]):
            truth = interventional_truth(scm, x)
            max_fd = max(max_fd, float(np.abs(frontdoor_estimate(obs_xps, x) - truth).max()))
            max_bd = max(max_bd, float(np.abs(backdoor_estimate(obs_kxs, x) - truth).max()))
    return {"models": n_models, "seed": seed, "max_frontdoor_dev": max_fd, "max_backdoor_dev": max_bd}
