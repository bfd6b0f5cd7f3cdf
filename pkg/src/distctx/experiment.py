"""Multi-trial simulation of the distributed learners and the resulting trace.

Randomness is drawn from independent streams keyed by
``(seed, trial, purpose, round, agent)``, so a trial's outcome does not depend
on how many trials run or in what order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from distctx.agent import HIDDEN, OBSERVED, Agent, ConfidenceParams
from distctx.config import ExperimentConfig
from distctx.contexts import (
    ContextDistribution,
    Environment,
    make_bilinear_env,
    make_synthetic_env,
    sample_round,
)
from distctx.errors import DataError
from distctx.linalg import weighted_norms
from distctx.protocol import Server, default_B
from distctx.ratings import factorize, ingest_ratings, read_factors

log = logging.getLogger(__name__)

_ENV, _ROUND, _NOISE = 0, 1, 2
CSV_HEADER = "trial,round,cum_regret,epochs,comm_scalars"


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _derived_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1, np.uint64)[0])


def build_env(cfg: ExperimentConfig, trial: int, factors=None) -> Environment:
    env_seed = _derived_seed(cfg.seed, trial, _ENV)
    if cfg.env == "synthetic":
        env = make_synthetic_env(
            env_seed,
            n=cfg.context_dim,
            n_actions=cfg.n_actions,
            noise_sigma=cfg.sigma,
            context_mean_scale=cfg.context_mean_scale,
            context_var=cfg.context_var,
        )
        return env
    users, items = factors if factors is not None else load_factors(cfg)
    return make_bilinear_env(users, items, cfg.noise_level, seed=env_seed,
                             n_actions=cfg.n_actions, noise_sigma=cfg.sigma)


def load_factors(cfg: ExperimentConfig):
    if cfg.factors:
        return read_factors(cfg.factors)
    if not cfg.ratings:
        raise DataError("movielens env needs a ratings or factors file")
    return factorize(ingest_ratings(cfg.ratings), cfg.rank, cfg.als_iterations, cfg.als_reg, seed=cfg.seed)


def agent_params(cfg: ExperimentConfig, env: Environment) -> tuple[str, ConfidenceParams]:
    """Update mode and ellipsoid parameters.

    ``exact`` runs the hidden-context learner on Dirac distributions at the
    realized context, which removes the context-noise term from its radius.
    """
    update_mode = OBSERVED if cfg.mode == "observed" else HIDDEN
    S = cfg.S if cfg.S is not None else env.theta_norm
    noise_bound = 0.0 if cfg.mode == "exact" or env.exact_contexts else 2.0
    params = ConfidenceParams.for_mode(update_mode, cfg.sigma, cfg.effective_delta, cfg.lam, S,
                                       cfg.rho_override, context_noise_bound=noise_bound)
    return update_mode, params


def threshold(cfg: ExperimentConfig, dim: int) -> float:
    return cfg.B_override if cfg.B_override is not None else default_B(cfg.T, cfg.M, dim)


@dataclass
class StepInfo:
    """What a probe sees for one ``(t, i)`` just before the agent updates."""

    t: int
    agent: Agent
    env: Environment
    mu: ContextDistribution
    visible_psi: np.ndarray
    env_psi: np.ndarray
    phi: np.ndarray
    action: int
    best: int
    rng_key: tuple


Probe = Callable[[StepInfo], None]


@dataclass
class ExperimentTrace:
    cum_regret: np.ndarray  # (trials, T)
    epochs: np.ndarray  # (trials, T)
    comm_scalars: np.ndarray  # (trials, T)
    actions: np.ndarray  # (trials, T, M)
    diagnostics: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def trials(self) -> int:
        return self.cum_regret.shape[0]

    @property
    def horizon(self) -> int:
        return self.cum_regret.shape[1]

    def final_regret(self) -> np.ndarray:
        return self.cum_regret[:, -1]

    def mean_curve(self) -> np.ndarray:
        return self.cum_regret.mean(axis=0)


def _new_diag(T: int, M: int) -> dict:
    return {
        "beta": np.zeros((T, M)),
        "log_det": np.zeros((T, M)),
        "covered": np.zeros((T, M), dtype=bool),
        "D": np.zeros((T, M)),
        "S": np.zeros((T, M)),
    }


def run_trial(
    cfg: ExperimentConfig,
    trial: int,
    env: Environment | None = None,
    probe: Probe | None = None,
    factors=None,
):
    """One independent run; returns per-round arrays and optional diagnostics."""
    env = env if env is not None else build_env(cfg, trial, factors)
    update_mode, params = agent_params(cfg, env)
    d, M, T = env.dim, cfg.M, cfg.T
    agents = [Agent(i, d, update_mode, params) for i in range(M)]
    server = Server(cfg.protocol, d, cfg.lam, threshold(cfg, d))
    theta = env.theta_star

    cum = np.zeros(T)
    epochs = np.zeros(T, dtype=np.int64)
    comm = np.zeros(T, dtype=np.int64)
    actions = np.zeros((T, M), dtype=np.int64)
    diag = _new_diag(T, M) if cfg.diagnostics else None
    total = 0.0
    for t in range(1, T + 1):
        rr = stream(cfg.seed, trial, _ROUND, t)
        mu = env.draw_distribution(rr)
        noise_rngs = [stream(cfg.seed, trial, _NOISE, t, i) for i in range(M)]
        obs = sample_round(env, mu, rr, noise_rngs)
        visible = ContextDistribution.dirac(obs.realized_context) if cfg.mode == "exact" else mu
        psi = env.psi_set(visible)
        env_psi = psi if visible is mu else env.psi_set(mu)
        phi = env.phi_set(obs.realized_context)
        means = phi @ theta
        best = int(np.argmax(env_psi @ theta))
        for i, agent in enumerate(agents):
            a, _ = agent.select_action(psi)
            actions[t - 1, i] = a
            total += means[best] - means[a]
            if diag is not None:
                _record(diag, t - 1, i, agent, theta, env_psi, phi, a, best)
            if probe is not None:
                probe(StepInfo(t, agent, env, mu, psi, env_psi, phi, a, best, (cfg.seed, trial, t, i)))
            y = means[a] + obs.noise[i]
            agent.local_update(psi[a], phi[a], y)
        server.end_of_round(agents, t)
        cum[t - 1] = total
        epochs[t - 1] = server.state.epoch_count
        comm[t - 1] = server.meter.total
    return cum, epochs, comm, actions, diag


def _record(diag, row, i, agent, theta, env_psi, phi, a, best):
    ell = agent.ellipsoid()
    diag["beta"][row, i] = ell.radius
    diag["log_det"][row, i] = agent.log_det()
    diag["covered"][row, i] = ell.distance(theta) <= ell.radius
    diag["D"][row, i] = ((phi[best] - phi[a]) - (env_psi[best] - env_psi[a])) @ theta
    norms = weighted_norms(ell.factor, np.vstack([env_psi[a], phi[a]]))
    diag["S"][row, i] = norms[0] - norms[1]


def run_experiment(cfg: ExperimentConfig, probe: Probe | None = None) -> ExperimentTrace:
    """Run ``cfg.trials`` independent trials; identical ``cfg`` gives an identical trace."""
    factors = load_factors(cfg) if cfg.env == "movielens" else None
    T, M = cfg.T, cfg.M
    out = ExperimentTrace(
        cum_regret=np.zeros((cfg.trials, T)),
        epochs=np.zeros((cfg.trials, T), dtype=np.int64),
        comm_scalars=np.zeros((cfg.trials, T), dtype=np.int64),
        actions=np.zeros((cfg.trials, T, M), dtype=np.int64),
        meta={"env": cfg.env, "mode": cfg.mode, "protocol": cfg.protocol, "M": M, "T": T,
              "seed": cfg.seed, "delta": cfg.effective_delta},
    )
    if cfg.env == "movielens":
        out.meta["noise_level"] = cfg.noise_level
    for trial in range(cfg.trials):
        cum, epochs, comm, actions, diag = run_trial(cfg, trial, probe=probe, factors=factors)
        out.cum_regret[trial] = cum
        out.epochs[trial] = epochs
        out.comm_scalars[trial] = comm
        out.actions[trial] = actions
        if diag is not None:
            out.diagnostics.append(diag)
        log.debug("trial %d: R(T)=%.4f epochs=%d", trial, cum[-1], epochs[-1])
    return out


def run_single_agent_reference(cfg: ExperimentConfig, trial: int, env: Environment | None = None):
    """A lone learner with no server at all, for checking the ``M = 1`` reduction.

    Returns ``(cumulative regret, actions)``.
    """
    env = env if env is not None else build_env(cfg, trial)
    update_mode, params = agent_params(cfg.replace(M=1), env)
    agent = Agent(0, env.dim, update_mode, params)
    regret, acts, total = np.zeros(cfg.T), np.zeros(cfg.T, dtype=np.int64), 0.0
    for t in range(1, cfg.T + 1):
        rr = stream(cfg.seed, trial, _ROUND, t)
        mu = env.draw_distribution(rr)
        obs = sample_round(env, mu, rr, [stream(cfg.seed, trial, _NOISE, t, 0)])
        visible = ContextDistribution.dirac(obs.realized_context) if cfg.mode == "exact" else mu
        psi = env.psi_set(visible)
        phi = env.phi_set(obs.realized_context)
        means = phi @ env.theta_star
        best = int(np.argmax(env.psi_set(mu) @ env.theta_star))
        a, _ = agent.select_action(psi)
        agent.local_update(psi[a], phi[a], means[a] + obs.noise[0])
        total += means[best] - means[a]
        regret[t - 1], acts[t - 1] = total, a
    return regret, acts


def format_csv(trace: ExperimentTrace) -> str:
    """``trial,round,cum_regret,epochs,comm_scalars``; trial-major, 17 significant digits."""
    lines = [CSV_HEADER]
    for trial in range(trace.trials):
        for r in range(trace.horizon):
            lines.append(
                f"{trial},{r + 1},{trace.cum_regret[trial, r]:.17g},"
                f"{trace.epochs[trial, r]},{trace.comm_scalars[trial, r]}"
            )
    return "\n".join(lines) + "\n"


def emit_csv(trace: ExperimentTrace, path: str | Path) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(format_csv(trace))
    except OSError as exc:
        raise OSError(f"cannot write trace CSV to {path}: {exc}") from exc


def empty_trace(M: int = 1) -> ExperimentTrace:
    return ExperimentTrace(np.zeros((0, 0)), np.zeros((0, 0), dtype=np.int64),
                           np.zeros((0, 0), dtype=np.int64), np.zeros((0, 0, M), dtype=np.int64))
