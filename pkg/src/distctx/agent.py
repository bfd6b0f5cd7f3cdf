"""Per-agent learner: ridge estimate, confidence ellipsoid and optimistic selection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from distctx.errors import ContractError
from distctx.linalg import (
    LinearStatistics,
    PsdAccumulator,
    as_feature,
    log_det_from_factor,
    ridge_solve,
    weighted_norms,
)

HIDDEN = "hidden"
OBSERVED = "observed"


def confidence_radius(log_det: float, dim: int, rho: float, delta: float, lam: float, S: float) -> float:
    """Radius of the self-normalised confidence ellipsoid.

    ``rho * sqrt(2 log(det(V)^{1/2} det(lam I)^{-1/2} / delta)) + sqrt(lam) * S``
    where ``log_det`` is ``log det V`` of the regularised Gram matrix.
    """
    if not 0 < delta <= 1:
        raise ContractError(f"delta must lie in (0, 1], got {delta}")
    if rho < 0:
        raise ContractError(f"rho must be >= 0, got {rho}")
    inner = (log_det - dim * math.log(lam)) + 2.0 * math.log(1.0 / delta)
    return rho * math.sqrt(max(inner, 0.0)) + math.sqrt(lam) * S


def gram_radius(gram: PsdAccumulator, rho: float, delta: float, lam: float, S: float) -> float:
    return confidence_radius(gram.log_det(), gram.dim, rho, delta, lam, S)


@dataclass(frozen=True)
class ConfidenceParams:
    rho: float
    delta: float
    lam: float = 1.0
    S: float = 1.0

    @classmethod
    def for_mode(
        cls,
        mode: str,
        sigma: float,
        delta: float,
        lam: float = 1.0,
        S: float = 1.0,
        rho_override: float | None = None,
        context_noise_bound: float = 2.0,
    ) -> "ConfidenceParams":
        """Hidden contexts: ``rho = sqrt(b^2 + sigma^2)`` at ``delta / 2``; observed: ``rho = sigma`` at ``delta / 3``.

        ``b`` bounds ``|<theta*, phi - psi>|``, the extra noise from learning on
        expected features: 2 for genuinely random contexts, 0 when every
        distribution shown to the agents is a Dirac.
        """
        if mode == HIDDEN:
            rho, d = math.sqrt(context_noise_bound**2 + sigma**2), delta / 2.0
        elif mode == OBSERVED:
            rho, d = sigma, delta / 3.0
        else:
            raise ContractError(f"unknown update mode {mode!r}")
        if rho_override is not None:
            rho = rho_override
        return cls(rho=rho, delta=d, lam=lam, S=S)


@dataclass(frozen=True)
class ConfidenceEllipsoid:
    center: np.ndarray
    gram: PsdAccumulator
    radius: float
    factor: np.ndarray

    def contains(self, theta) -> bool:
        return self.distance(theta) <= self.radius

    def distance(self, theta) -> float:
        """``||center - theta||`` measured in the regularised Gram metric."""
        diff = self.center - as_feature(theta, self.center.shape[0])
        return float(np.linalg.norm(self.factor.T @ diff))

    def optimistic_theta(self, psi) -> np.ndarray:
        """The parameter in the ellipsoid maximising ``<psi, theta>``."""
        psi = as_feature(psi, self.center.shape[0])
        z = ridge_solve(self.gram, LinearStatistics(psi), self.factor)
        norm = math.sqrt(max(float(psi @ z), 0.0))
        if norm == 0.0:
            return self.center.copy()
        return self.center + self.radius * z / norm


class Agent:
    """Learning state owned by one agent.

    ``local_*`` hold the samples gathered since the last synchronisation,
    ``synced_*`` the aggregate last broadcast by the server.  In ``hidden``
    mode expected features are accumulated; in ``observed`` mode the features
    of the revealed context are.
    """

    def __init__(self, agent_id: int, dim: int, mode: str, params: ConfidenceParams):
        if mode not in (HIDDEN, OBSERVED):
            raise ContractError(f"unknown update mode {mode!r}")
        self.agent_id = agent_id
        self.dim = dim
        self.mode = mode
        self.params = params
        self.local_gram = PsdAccumulator.zeros(dim, params.lam)
        self.local_stats = LinearStatistics.zeros(dim)
        self.synced_gram = PsdAccumulator.zeros(dim, params.lam)
        self.synced_stats = LinearStatistics.zeros(dim)
        self._cache: ConfidenceEllipsoid | None = None

    def total_gram(self) -> PsdAccumulator:
        """``W_syn + W_local``; its regularised form is the agent's design matrix."""
        return self.synced_gram + self.local_gram

    def total_stats(self) -> LinearStatistics:
        return self.synced_stats + self.local_stats

    def ellipsoid(self) -> ConfidenceEllipsoid:
        if self._cache is None:
            gram = self.total_gram()
            factor = gram.cholesky()
            center = ridge_solve(gram, self.total_stats(), factor)
            p = self.params
            radius = confidence_radius(log_det_from_factor(factor), self.dim, p.rho, p.delta, p.lam, p.S)
            self._cache = ConfidenceEllipsoid(center, gram, radius, factor)
        return self._cache

    def log_det(self) -> float:
        return log_det_from_factor(self.ellipsoid().factor)

    def select_action(self, psi_set: np.ndarray, radius: float | None = None) -> tuple[int, float]:
        """Optimistic action over the rows of ``psi_set``; lowest index wins ties.

        Maximising ``<psi, theta>`` jointly over actions and the ellipsoid has
        the closed form ``psi . center + radius * ||psi||_{V^-1}``.
        """
        psi_set = np.atleast_2d(psi_set)
        if psi_set.shape[0] == 0:
            raise ContractError("empty action set")
        if psi_set.shape[1] != self.dim:
            raise ContractError(f"dimension mismatch: expected {self.dim}, got {psi_set.shape[1]}")
        ell = self.ellipsoid()
        beta = ell.radius if radius is None else radius
        scores = psi_set @ ell.center + beta * weighted_norms(ell.factor, psi_set)
        idx = int(np.argmax(scores))
        return idx, float(scores[idx])

    def local_update(self, psi, phi_realized, reward: float) -> None:
        if self.mode == OBSERVED:
            if phi_realized is None:
                raise ContractError("observed mode needs the realized-context features")
            v = as_feature(phi_realized, self.dim)
        else:
            v = as_feature(psi, self.dim)
        self.local_gram = PsdAccumulator(self.local_gram.matrix + np.outer(v, v), self.params.lam)
        self.local_stats = self.local_stats.add_scaled(v, reward)
        self._cache = None

    def absorb_sync(self, w_syn: PsdAccumulator, u_syn: LinearStatistics) -> None:
        if w_syn.dim != self.dim or u_syn.dim != self.dim:
            raise ContractError("synchronised state has the wrong dimension")
        self.synced_gram = w_syn
        self.synced_stats = u_syn
        self.local_gram = PsdAccumulator.zeros(self.dim, self.params.lam)
        self.local_stats = LinearStatistics.zeros(self.dim)
        self._cache = None
