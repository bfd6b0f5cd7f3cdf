"""Context distributions, feature maps and the two simulated environments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from distctx.errors import ContractError
from distctx.linalg import as_feature

MC_SAMPLES = 10_000
PROBES = 100_000


@dataclass(frozen=True)
class ContextDistribution:
    """A distribution over contexts that agents can query and the world can sample.

    Use the :meth:`dirac`, :meth:`gaussian` and :meth:`empirical` constructors.
    ``label`` is an opaque tag environments can use to recover which latent
    context (e.g. a user) the distribution describes.
    """

    kind: str
    mean: np.ndarray | None = None
    cov_diag: np.ndarray | None = None
    points: np.ndarray | None = None
    weights: np.ndarray | None = None
    label: int | None = None

    @classmethod
    def dirac(cls, c, label: int | None = None) -> "ContextDistribution":
        return cls("dirac", mean=as_feature(c), label=label)

    @classmethod
    def gaussian(cls, mean, cov_diag, label: int | None = None) -> "ContextDistribution":
        mean = as_feature(mean)
        cov_diag = as_feature(cov_diag, mean.shape[0])
        if np.any(cov_diag < 0):
            raise ContractError("gaussian cov_diag entries must be >= 0")
        return cls("gaussian", mean=mean, cov_diag=cov_diag, label=label)

    @classmethod
    def empirical(cls, points, weights, label: int | None = None) -> "ContextDistribution":
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (points.shape[0],):
            raise ContractError("one weight per point required")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ContractError("empirical weights must be >= 0 and sum to 1")
        return cls("empirical", points=points, weights=weights, label=label)

    @property
    def context_dim(self) -> int:
        if self.kind == "empirical":
            return self.points.shape[1]
        return self.mean.shape[0]

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        n = self.context_dim
        shape = (n,) if size is None else (size, n)
        if self.kind == "dirac":
            return np.broadcast_to(self.mean, shape).copy()
        if self.kind == "gaussian":
            return self.mean + np.sqrt(self.cov_diag) * rng.standard_normal(shape)
        idx = rng.choice(self.points.shape[0], size=size, p=self.weights)
        return self.points[idx].copy()


class FeatureMap:
    """Maps an (action, context) pair to a ``dim``-vector.

    Subclasses implement :meth:`phi_batch` and, optionally, a closed-form
    expectation in :meth:`closed_form_psi`; ``scale`` multiplies every feature.
    """

    dim: int
    scale: float = 1.0

    def phi_batch(self, actions: np.ndarray, c: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def closed_form_psi(self, actions: np.ndarray, mu: ContextDistribution) -> np.ndarray | None:
        return None

    def phi_pairs(self, actions: np.ndarray, contexts: np.ndarray) -> np.ndarray:
        """Row ``j`` is ``phi(actions[j], contexts[j])``."""
        raise NotImplementedError

    def phi(self, x, c) -> np.ndarray:
        return self.phi_batch(np.atleast_2d(np.asarray(x, dtype=np.float64)), as_feature(c))[0]


@dataclass
class QuadraticFeatures(FeatureMap):
    """``[x_1^2..x_n^2, c_1^2..c_n^2, x_1 c_1..x_n c_n]``."""

    n: int
    scale: float = 1.0

    @property
    def dim(self) -> int:
        return 3 * self.n

    def _check(self, actions, c_dim):
        if actions.shape[1] != self.n or c_dim != self.n:
            raise ContractError(
                f"action/context dims {actions.shape[1]}/{c_dim} do not match n={self.n}"
            )

    def phi_batch(self, actions, c):
        actions = np.atleast_2d(actions)
        self._check(actions, c.shape[-1])
        k = actions.shape[0]
        out = np.empty((k, 3 * self.n))
        out[:, : self.n] = actions**2
        out[:, self.n : 2 * self.n] = c**2
        out[:, 2 * self.n :] = actions * c
        return out * self.scale

    def phi_pairs(self, actions, contexts):
        return np.hstack([actions**2, contexts**2, actions * contexts]) * self.scale

    def closed_form_psi(self, actions, mu):
        if mu.kind != "gaussian":
            return None
        actions = np.atleast_2d(actions)
        self._check(actions, mu.context_dim)
        m, v = mu.mean, mu.cov_diag
        k = actions.shape[0]
        out = np.empty((k, 3 * self.n))
        out[:, : self.n] = actions**2
        out[:, self.n : 2 * self.n] = m**2 + v
        out[:, 2 * self.n :] = actions * m
        return out * self.scale


@dataclass
class BilinearFeatures(FeatureMap):
    """``vec(c x^T)`` for a user vector ``c`` and an item vector ``x``, both of length ``k``."""

    k: int
    scale: float = 1.0

    @property
    def dim(self) -> int:
        return self.k * self.k

    def phi_batch(self, actions, c):
        actions = np.atleast_2d(actions)
        if actions.shape[1] != self.k or c.shape[-1] != self.k:
            raise ContractError(
                f"factor dims {c.shape[-1]}/{actions.shape[1]} do not match k={self.k}"
            )
        return (c[None, :, None] * actions[:, None, :]).reshape(actions.shape[0], -1) * self.scale

    def phi_pairs(self, actions, contexts):
        return (contexts[:, :, None] * actions[:, None, :]).reshape(actions.shape[0], -1) * self.scale

    def closed_form_psi(self, actions, mu):
        # Linear in the context, so only the mean matters.
        if mu.kind != "gaussian":
            return None
        return self.phi_batch(actions, mu.mean)


def monte_carlo_psi(
    fmap: FeatureMap,
    actions: np.ndarray,
    mu: ContextDistribution,
    n_samples: int = MC_SAMPLES,
    seed: int = 0,
) -> np.ndarray:
    rng = np.random.default_rng(seed)
    samples = mu.sample(rng, size=n_samples)
    acc = np.zeros((np.atleast_2d(actions).shape[0], fmap.dim))
    for c in samples:
        acc += fmap.phi_batch(actions, c)
    return acc / n_samples


def psi_batch(fmap: FeatureMap, actions: np.ndarray, mu: ContextDistribution) -> np.ndarray:
    """Expected features ``E_{c~mu}[phi(x, c)]`` for every row of ``actions``."""
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    if mu.kind == "dirac":
        return fmap.phi_batch(actions, mu.mean)
    if mu.kind == "empirical":
        out = np.zeros((actions.shape[0], fmap.dim))
        for w, c in zip(mu.weights, mu.points):
            out += w * fmap.phi_batch(actions, c)
        return out
    closed = fmap.closed_form_psi(actions, mu)
    if closed is not None:
        return closed
    return monte_carlo_psi(fmap, actions, mu)


def psi_expected(fmap: FeatureMap, x, mu: ContextDistribution) -> np.ndarray:
    return psi_batch(fmap, np.atleast_2d(np.asarray(x, dtype=np.float64)), mu)[0]


@dataclass(frozen=True)
class RoundObservation:
    """One round of the world: the shown distribution, the hidden context and per-agent noise."""

    mu: ContextDistribution
    realized_context: np.ndarray
    noise: np.ndarray

    def reward(self, env: "Environment", agent: int, action: int) -> float:
        phi = env.phi_set(self.realized_context)[action]
        return float(phi @ env.theta_star + self.noise[agent])


@dataclass
class Environment:
    """Finite action set, a feature map and the (scaled) true parameter.

    ``reward_scale`` is the affine map ``(a, b)`` applied to raw rewards;
    ``theta_star`` and ``features.scale`` are already adjusted so that
    ``phi . theta_star = a * raw + b``.
    """

    actions: np.ndarray
    features: FeatureMap
    theta_star: np.ndarray
    noise_sigma: float
    reward_scale: tuple[float, float] = (1.0, 0.0)
    name: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.actions = np.atleast_2d(np.asarray(self.actions, dtype=np.float64))
        self.theta_star = as_feature(self.theta_star, self.features.dim)
        if self.actions.shape[0] < 1:
            raise ContractError("environment needs at least one action")
        if self.noise_sigma < 0:
            raise ContractError("noise_sigma must be >= 0")

    @property
    def n_actions(self) -> int:
        return self.actions.shape[0]

    @property
    def dim(self) -> int:
        return self.features.dim

    @property
    def exact_contexts(self) -> bool:
        """True when the distributions shown to agents pin down the realized context."""
        return False

    @property
    def theta_norm(self) -> float:
        return float(np.linalg.norm(self.theta_star))

    def phi_set(self, c) -> np.ndarray:
        return self.features.phi_batch(self.actions, np.asarray(c, dtype=np.float64))

    def psi_set(self, mu: ContextDistribution) -> np.ndarray:
        return psi_batch(self.features, self.actions, mu)

    def draw_distribution(self, rng: np.random.Generator) -> ContextDistribution:
        raise NotImplementedError(f"{self.name} environment has no context model")

    def realize(self, mu: ContextDistribution, rng: np.random.Generator) -> np.ndarray:
        return mu.sample(rng)

    def realize_many(self, mu: ContextDistribution, rng: np.random.Generator, n: int) -> np.ndarray:
        return mu.sample(rng, size=n)

    def probe_contexts(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Contexts from the marginal law of the realized context (used for calibration)."""
        return np.stack([self.realize(self.draw_distribution(rng), rng) for _ in range(n)])


class SyntheticEnv(Environment):
    """Gaussian actions, quadratic reward ``sum (x_i - c_i)^2``, ``mu_t = N(m_t, v I)``.

    The per-round mean ``m_t`` is ``N(0, s^2 I)`` with ``s = context_mean_scale``;
    ``context_var = 0`` turns every ``mu_t`` into a Dirac at ``m_t``.
    """

    context_mean_scale: float = 1.0
    context_var: float = 1.0

    @property
    def exact_contexts(self):
        return self.context_var == 0

    def draw_distribution(self, rng):
        n = self.actions.shape[1]
        m = self.context_mean_scale * rng.standard_normal(n)
        if self.context_var == 0:
            return ContextDistribution.dirac(m)
        return ContextDistribution.gaussian(m, np.full(n, self.context_var))

    def probe_contexts(self, rng, n):
        dim = self.actions.shape[1]
        means = self.context_mean_scale * rng.standard_normal((n, dim))
        return means + np.sqrt(self.context_var) * rng.standard_normal((n, dim))


class BilinearEnv(Environment):
    """Users as contexts, items as actions; agents see a noisy copy of the user factor."""

    user_feats: np.ndarray
    noisy_user_feats: np.ndarray

    @property
    def exact_contexts(self):
        return bool(np.array_equal(self.user_feats, self.noisy_user_feats))

    def draw_distribution(self, rng):
        u = int(rng.integers(self.user_feats.shape[0]))
        return ContextDistribution.dirac(self.noisy_user_feats[u], label=u)

    def realize(self, mu, rng):
        if mu.label is None:
            return mu.sample(rng)
        return self.user_feats[mu.label].copy()

    def realize_many(self, mu, rng, n):
        if mu.label is None:
            return mu.sample(rng, size=n)
        return np.tile(self.user_feats[mu.label], (n, 1))

    def probe_contexts(self, rng, n):
        return self.user_feats[rng.integers(self.user_feats.shape[0], size=n)]


def sample_round(
    env: Environment,
    mu: ContextDistribution,
    rng: np.random.Generator,
    agent_rngs: list[np.random.Generator] | None = None,
) -> RoundObservation:
    """Draw the realized context once from ``rng`` and one noise term per agent stream."""
    c = env.realize(mu, rng)
    agent_rngs = agent_rngs or [rng]
    if env.noise_sigma > 0:
        noise = np.array([env.noise_sigma * g.standard_normal() for g in agent_rngs])
    else:
        noise = np.zeros(len(agent_rngs))
    return RoundObservation(mu, c, noise)


def best_action(env: Environment, mu: ContextDistribution) -> int:
    """Distribution-optimal action; ``np.argmax`` breaks ties by lowest index."""
    return int(np.argmax(env.psi_set(mu) @ env.theta_star))


def _calibrate(env: Environment, raw_theta: np.ndarray, seed: int, n_probes: int) -> None:
    """Rescale features to unit norm and rewards into [0, 1] from a seeded probe set.

    The raw rewards handled here are nonnegative (a sum of squares, or a
    rating), so the reward map is a pure scaling anchored at zero; that keeps
    the reward linear in the features.
    """
    rng = np.random.default_rng([seed, 0xCA11B])
    contexts = env.probe_contexts(rng, n_probes)
    acts = rng.integers(env.n_actions, size=n_probes)
    env.features.scale = 1.0
    phi = env.features.phi_pairs(env.actions[acts], contexts)
    raw = phi @ raw_theta
    norms = np.sqrt(np.einsum("ij,ij->i", phi, phi))
    r_max = max(float(raw.max()), 1e-12)
    d_max = max(float(norms.max()), 1e-12)
    env.features.scale = 1.0 / d_max
    env.theta_star = raw_theta * (d_max / r_max)
    env.reward_scale = (1.0 / r_max, 0.0)
    env.meta.update(raw_reward_min=float(raw.min()), raw_reward_max=float(raw.max()),
                    feature_norm_max=float(norms.max()))


def synthetic_theta(n: int = 5) -> np.ndarray:
    return np.concatenate([np.ones(2 * n), -2.0 * np.ones(n)])


def make_synthetic_env(
    seed: int,
    n: int = 5,
    n_actions: int = 20,
    noise_sigma: float = 1e-3,
    context_mean_scale: float = 1.0,
    context_var: float = 1.0,
    n_probes: int = PROBES,
) -> SyntheticEnv:
    rng = np.random.default_rng([seed, 0x5E7])
    actions = rng.standard_normal((n_actions, n))
    raw_theta = synthetic_theta(n)
    env = SyntheticEnv(actions, QuadraticFeatures(n), raw_theta, noise_sigma, name="synthetic")
    env.context_mean_scale = context_mean_scale
    env.context_var = context_var
    _calibrate(env, raw_theta, seed, n_probes)
    return env


def make_bilinear_env(
    user_feats,
    movie_feats,
    noise_level: float = 0.1,
    seed: int = 0,
    n_actions: int | None = None,
    noise_sigma: float = 1e-3,
    n_probes: int = PROBES,
) -> BilinearEnv:
    """Items are actions, users are contexts; ``phi(m, u) = vec(v_u w_m^T)``.

    ``theta_star = vec(I_k)`` so that the unscaled reward is ``v_u . w_m``.
    Each user's visible factor is ``v_u`` plus Gaussian noise of scale
    ``noise_level``, drawn once at construction.
    """
    users = np.atleast_2d(np.asarray(user_feats, dtype=np.float64))
    movies = np.atleast_2d(np.asarray(movie_feats, dtype=np.float64))
    if users.shape[1] != movies.shape[1]:
        raise ContractError(
            f"user factors have rank {users.shape[1]}, item factors {movies.shape[1]}"
        )
    k = users.shape[1]
    rng = np.random.default_rng([seed, 0xB11])
    if n_actions is not None and n_actions < movies.shape[0]:
        movies = movies[np.sort(rng.choice(movies.shape[0], size=n_actions, replace=False))]
    noisy = users + noise_level * rng.standard_normal(users.shape) if noise_level > 0 else users.copy()
    raw_theta = np.eye(k).ravel()
    env = BilinearEnv(movies, BilinearFeatures(k), raw_theta, noise_sigma, name="movielens",
                      meta={"noise_level": noise_level})
    env.user_feats = users
    env.noisy_user_feats = noisy
    _calibrate(env, raw_theta, seed, n_probes)
    return env
