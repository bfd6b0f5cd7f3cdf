"""Central server: event-triggered synchronisation, baselines and communication metering.

Counting convention: a Gram matrix travels as ``d*d`` scalars, a statistics
vector as ``d``, and each synchronisation signal costs one integer.  The
network is lossless with zero latency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from distctx.agent import Agent
from distctx.errors import ContractError
from distctx.linalg import LinearStatistics, PsdAccumulator, log_det_ratio

EVENT_TRIGGERED = "event_triggered"
IMMEDIATE_SHARING = "immediate_sharing"
NO_COMMUNICATION = "no_communication"
PROTOCOLS = (EVENT_TRIGGERED, IMMEDIATE_SHARING, NO_COMMUNICATION)


@dataclass
class CommMeter:
    scalars_up: int = 0
    scalars_down: int = 0
    signals: int = 0

    @property
    def total(self) -> int:
        return self.scalars_up + self.scalars_down + self.signals

    @property
    def scalars(self) -> int:
        return self.scalars_up + self.scalars_down


@dataclass
class SyncProtocolState:
    """Server-side state; ``v_last`` is stored raw, so its regularised form is ``lam I + W_syn``."""

    w_syn: PsdAccumulator
    u_syn: LinearStatistics
    v_last: PsdAccumulator
    threshold_B: float
    t_last: int = 0
    epoch_count: int = 0
    _v_last_logdet: float | None = field(default=None, repr=False)

    @classmethod
    def initial(cls, dim: int, lam: float, threshold_B: float) -> "SyncProtocolState":
        zero = PsdAccumulator.zeros(dim, lam)
        return cls(zero, LinearStatistics.zeros(dim), zero, threshold_B)

    def v_last_logdet(self) -> float:
        if self._v_last_logdet is None:
            self._v_last_logdet = self.v_last.log_det()
        return self._v_last_logdet


def default_B(T: int, M: int, d: int) -> float:
    """Sync threshold ``T log(MT) / (d M)``."""
    if T <= 0 or M <= 0 or d <= 0:
        raise ContractError("T, M and d must be positive")
    return T * math.log(M * T) / (d * M)


def epoch_bound(T: int, M: int, d: int, B: float, lam: float = 1.0) -> int:
    """Worst-case number of synchronisation epochs, ``2 ceil(sqrt(T R / B))``.

    ``R = ceil(d log(1 + M T / (lam d)))`` bounds the total log-determinant
    growth for unit-norm features.
    """
    R = math.ceil(d * math.log(1.0 + M * T / (lam * d)))
    if math.isinf(B):
        return 2
    return 2 * math.ceil(math.sqrt(T * R / B))


def _fires(log_ratio: float, elapsed: int, B: float) -> bool:
    if math.isinf(B):
        return False
    return log_ratio * elapsed >= B


def trigger_check(agent_gram_total: PsdAccumulator, proto: SyncProtocolState, t: int) -> bool:
    """True iff ``log(det V_t / det V_last) * (t - t_last) >= B``."""
    if t < proto.t_last:
        raise ContractError(f"round {t} precedes last sync {proto.t_last}")
    return _fires(log_det_ratio(agent_gram_total, proto.v_last), t - proto.t_last, proto.threshold_B)


def run_sync_round(agents: list[Agent], proto: SyncProtocolState, meter: CommMeter, t: int) -> None:
    """Upload every local buffer, aggregate, broadcast, reset."""
    d = proto.w_syn.dim
    w, u = proto.w_syn, proto.u_syn
    for agent in agents:
        w = w + agent.local_gram
        u = u + agent.local_stats
    proto.w_syn, proto.u_syn = w, u
    for agent in agents:
        agent.absorb_sync(w, u)
    proto.t_last = t
    proto.v_last = w
    proto._v_last_logdet = None
    proto.epoch_count += 1
    per_agent = d * d + d
    meter.scalars_up += len(agents) * per_agent
    meter.scalars_down += len(agents) * per_agent
    meter.signals += 1


def run_immediate_sharing_round(
    agents: list[Agent], proto: SyncProtocolState, meter: CommMeter, t: int
) -> None:
    """Relay this round's sample of every agent to all peers through the server.

    Each agent uploads its ``(feature, reward)`` pair (``d + 1`` scalars) and
    the server forwards it to the ``M - 1`` others.  Replicating the
    accumulated statistics is equivalent to every agent refitting on all
    relayed samples.
    """
    m = len(agents)
    d = proto.w_syn.dim
    w, u = proto.w_syn, proto.u_syn
    for agent in agents:
        w = w + agent.local_gram
        u = u + agent.local_stats
    proto.w_syn, proto.u_syn = w, u
    for agent in agents:
        agent.absorb_sync(w, u)
    proto.t_last = t
    proto.v_last = w
    proto._v_last_logdet = None
    proto.epoch_count += 1
    meter.scalars_up += m * (d + 1)
    meter.scalars_down += m * (m - 1) * (d + 1)


class Server:
    """Runs the chosen protocol at the end-of-round barrier."""

    def __init__(self, kind: str, dim: int, lam: float, threshold_B: float = math.inf):
        if kind not in PROTOCOLS:
            raise ContractError(f"unknown protocol {kind!r}")
        self.kind = kind
        if kind == NO_COMMUNICATION:
            threshold_B = math.inf
        self.state = SyncProtocolState.initial(dim, lam, threshold_B)
        self.meter = CommMeter()

    def triggered(self, agents: list[Agent], t: int) -> bool:
        if self.kind != EVENT_TRIGGERED:
            return False
        proto = self.state
        if math.isinf(proto.threshold_B):
            return False
        base = proto.v_last_logdet()
        elapsed = t - proto.t_last
        return any(_fires(a.log_det() - base, elapsed, proto.threshold_B) for a in agents)

    def end_of_round(self, agents: list[Agent], t: int) -> bool:
        """Evaluate every agent's trigger after round ``t``; at most one sync runs."""
        if self.kind == IMMEDIATE_SHARING:
            run_immediate_sharing_round(agents, self.state, self.meter, t)
            return True
        if self.triggered(agents, t):
            run_sync_round(agents, self.state, self.meter, t)
            return True
        return False
