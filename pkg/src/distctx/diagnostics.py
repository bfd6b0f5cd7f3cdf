"""Statistical checks of the quantities the regret analysis relies on.

* coverage: how often ``theta*`` falls outside an agent's confidence ellipsoid;
* ``D_j``: the realized-minus-expected regret gap, a bounded martingale difference;
* ``S_j = ||psi||_{V^-1} - ||phi||_{V^-1}``, a supermartingale difference;
* the Azuma envelope on the running sum of ``D_j``.

The conditional-mean checks freeze one ``(t, i)`` (history, distribution,
chosen action) and resample the context many times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from distctx.config import ExperimentConfig
from distctx.experiment import StepInfo, run_experiment, stream
from distctx.linalg import weighted_norms

RESAMPLES = 100_000
_RESAMPLE = 3


@dataclass
class CheckResult:
    name: str
    passed: bool
    stats: dict = field(default_factory=dict)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        detail = " ".join(f"{k}={_fmt(v)}" for k, v in self.stats.items())
        return f"{tag} {self.name}: {detail}"


@dataclass
class DiagnosticReport:
    checks: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def render(self) -> str:
        return "\n".join(c.line() for c in self.checks)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


@dataclass
class Resample:
    t: int
    agent: int
    d_mean: float
    d_se: float
    s_mean: float
    s_se: float


def resample_step(info: StepInfo, n: int = RESAMPLES) -> Resample:
    """Freeze ``(history, mu_t, x_{t,i})`` and redraw the context ``n`` times."""
    env, theta = info.env, info.env.theta_star
    rng = stream(info.rng_key[0], info.rng_key[1], _RESAMPLE, info.rng_key[2], info.rng_key[3])
    contexts = env.realize_many(info.mu, rng, n)
    acts = env.actions
    phi_best = env.features.phi_pairs(np.broadcast_to(acts[info.best], contexts.shape), contexts)
    phi_act = env.features.phi_pairs(np.broadcast_to(acts[info.action], contexts.shape), contexts)
    psi = info.env_psi
    d = ((phi_best - phi_act) - (psi[info.best] - psi[info.action])) @ theta
    factor = info.agent.ellipsoid().factor
    s = weighted_norms(factor, psi[info.action][None, :])[0] - weighted_norms(factor, phi_act)
    root = math.sqrt(n)
    return Resample(info.t, info.agent.agent_id, float(d.mean()), float(d.std(ddof=1) / root),
                    float(s.mean()), float(s.std(ddof=1) / root))


def azuma_envelope(M: int, T: int, delta: float) -> float:
    return 4.0 * math.sqrt(2.0 * M * T * math.log(1.0 / delta))


def _within(mean: float, se: float, k: float = 4.0) -> bool:
    return abs(mean) <= k * se + 1e-12


def diagnostics_suite(
    cfg: ExperimentConfig,
    checkpoints: tuple[int, ...] | None = None,
    resample_trials: int = 1,
    n_resamples: int = RESAMPLES,
) -> DiagnosticReport:
    """Run ``cfg`` with per-step diagnostics and evaluate every check.

    Resampling happens for agent 0 at ``checkpoints`` (default: a quarter,
    half and all of the horizon) in the first ``resample_trials`` trials.
    """
    cfg = cfg.replace(diagnostics=True)
    if checkpoints is None:
        checkpoints = tuple(sorted({max(1, cfg.T // 4), max(1, cfg.T // 2), cfg.T}))
    samples: list[Resample] = []

    def probe(info: StepInfo) -> None:
        if info.rng_key[1] < resample_trials and info.agent.agent_id == 0 and info.t in checkpoints:
            samples.append(resample_step(info, n_resamples))

    trace = run_experiment(cfg, probe=probe)
    delta, M, T = cfg.effective_delta, cfg.M, cfg.T
    diags = trace.diagnostics

    miss = np.mean([1.0 - d["covered"].mean() for d in diags])
    limit = M * delta + 0.02
    coverage = CheckResult("coverage", bool(miss <= limit),
                           {"miss_fraction": float(miss), "limit": float(limit)})

    d_abs = max(float(np.abs(d["D"]).max()) for d in diags)
    d_bound = CheckResult("D_bounded", d_abs <= 4.0, {"max_abs_D": d_abs, "bound": 4.0})

    d_ok = all(_within(r.d_mean, r.d_se) for r in samples)
    worst_d = max(samples, key=lambda r: abs(r.d_mean) / max(r.d_se, 1e-300)) if samples else None
    d_mart = CheckResult("D_conditional_mean", d_ok, {
        "points": len(samples),
        "worst_mean": worst_d.d_mean if worst_d else 0.0,
        "worst_se": worst_d.d_se if worst_d else 0.0,
    })

    s_ok = all(r.s_mean <= 4.0 * r.s_se + 1e-12 for r in samples)
    s_abs = max(float(np.abs(d["S"]).max()) for d in diags)
    s_limit = 2.0 / math.sqrt(cfg.lam)
    s_mart = CheckResult("S_supermartingale", s_ok and s_abs <= s_limit, {
        "max_mean": max((r.s_mean for r in samples), default=0.0),
        "max_abs_S": s_abs,
        "bound": s_limit,
    })

    envelope = azuma_envelope(M, T, delta)
    sums = np.array([d["D"].sum() for d in diags])
    freq = float(np.mean(sums <= envelope))
    azuma = CheckResult("azuma_envelope", freq >= 1.0 - delta - 0.02, {
        "frequency": freq,
        "required": 1.0 - delta - 0.02,
        "envelope": envelope,
        "max_sum_D": float(sums.max()),
    })
    return DiagnosticReport([coverage, d_bound, d_mart, s_mart, azuma])
