import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distctx.agent import HIDDEN, Agent, ConfidenceParams
from distctx.errors import ContractError
from distctx.linalg import PsdAccumulator
from distctx.protocol import (
    EVENT_TRIGGERED,
    IMMEDIATE_SHARING,
    NO_COMMUNICATION,
    CommMeter,
    Server,
    SyncProtocolState,
    default_B,
    epoch_bound,
    run_immediate_sharing_round,
    run_sync_round,
    trigger_check,
)


def agents(m, d):
    params = ConfidenceParams(rho=1.0, delta=0.1)
    return [Agent(i, d, HIDDEN, params) for i in range(m)]


# -- trigger -----------------------------------------------------------------


def test_no_new_data_never_triggers():
    proto = SyncProtocolState.initial(3, 1.0, 1e-9)
    assert not trigger_check(PsdAccumulator.zeros(3), proto, 50)


def test_scalar_trigger_example():
    proto = SyncProtocolState.initial(1, 1.0, 5.0)
    now = PsdAccumulator(np.array([[math.e**2 - 1.0]]))
    assert trigger_check(now, proto, 3)
    assert not trigger_check(now, proto, 2)  # 2 * 2 = 4 < 5


def test_infinite_threshold_never_triggers():
    proto = SyncProtocolState.initial(1, 1.0, math.inf)
    assert not trigger_check(PsdAccumulator(np.array([[1e12]])), proto, 10**6)


def test_trigger_rejects_past_round():
    proto = SyncProtocolState.initial(1, 1.0, 1.0)
    proto.t_last = 5
    with pytest.raises(ContractError):
        trigger_check(PsdAccumulator.zeros(1), proto, 4)


# -- threshold and bound ---------------------------------------------------------


def test_default_threshold():
    assert default_B(1000, 3, 15) == pytest.approx(1000 * math.log(3000) / 45, rel=1e-15)
    # 1000 ln(3000) / 45 = 177.919...; the rounded reference value is 177.93.
    assert default_B(1000, 3, 15) == pytest.approx(177.93, abs=0.02)


def test_default_threshold_scalar():
    assert default_B(math.e, 1, 1) == pytest.approx(math.e, rel=1e-15)


def test_default_threshold_rejects_nonpositive():
    with pytest.raises(ContractError):
        default_B(0, 1, 1)


def test_epoch_bound_example():
    assert math.ceil(15 * math.log(1 + 200)) == 80
    assert epoch_bound(1000, 3, 15, default_B(1000, 3, 15)) == 44


def test_epoch_bound_infinite_threshold():
    assert epoch_bound(1000, 3, 15, math.inf) == 2
    assert epoch_bound(1000, 3, 15, 1e300) == 2


def test_epoch_bound_decreases_with_threshold():
    values = [epoch_bound(1000, 3, 15, b) for b in (10, 100, 1000, 10_000)]
    assert values == sorted(values, reverse=True)


# -- sync rounds ---------------------------------------------------------------


def test_degenerate_sync_still_charged():
    group = agents(3, 2)
    proto, meter = SyncProtocolState.initial(2, 1.0, 1.0), CommMeter()
    run_sync_round(group, proto, meter, 1)
    assert not proto.w_syn.matrix.any()
    assert proto.epoch_count == 1
    assert (meter.scalars_up, meter.scalars_down, meter.signals, meter.total) == (18, 18, 1, 37)


def test_sync_aggregates_and_resets():
    group = agents(2, 2)
    group[0].local_update([1.0, 0.0], None, 1.0)
    group[1].local_update([0.0, 2.0], None, 3.0)
    proto, meter = SyncProtocolState.initial(2, 1.0, 1.0), CommMeter()
    run_sync_round(group, proto, meter, 4)
    np.testing.assert_array_equal(proto.w_syn.matrix, [[1.0, 0.0], [0.0, 4.0]])
    np.testing.assert_array_equal(proto.u_syn.vector, [1.0, 6.0])
    np.testing.assert_array_equal(proto.v_last.regularized(), np.eye(2) + proto.w_syn.matrix)
    assert proto.t_last == 4
    for a in group:
        assert not a.local_gram.matrix.any()
        np.testing.assert_array_equal(a.synced_gram.matrix, proto.w_syn.matrix)


def test_immediate_sharing_costs():
    proto, meter = SyncProtocolState.initial(15, 1.0, math.inf), CommMeter()
    run_immediate_sharing_round(agents(3, 15), proto, meter, 1)
    assert (meter.scalars_up, meter.scalars_down, meter.signals) == (48, 96, 0)
    proto, meter = SyncProtocolState.initial(15, 1.0, math.inf), CommMeter()
    run_immediate_sharing_round(agents(1, 15), proto, meter, 1)
    assert meter.scalars_down == 0


def test_server_rejects_unknown_protocol():
    with pytest.raises(ContractError):
        Server("gossip", 2, 1.0)


def test_no_communication_never_syncs():
    group = agents(2, 2)
    server = Server(NO_COMMUNICATION, 2, 1.0, threshold_B=1e-12)
    for t in range(1, 20):
        for a in group:
            a.local_update([1.0, 1.0], None, 1.0)
        assert not server.end_of_round(group, t)
    assert server.meter.total == 0


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.floats(0.01, 50.0), st.integers(0, 2**31))
def test_conservation_and_metering(m, d, B, seed):
    rng = np.random.default_rng(seed)
    group = agents(m, d)
    server = Server(EVENT_TRIGGERED, d, 1.0, threshold_B=B)
    shadow = np.zeros((d, d))
    prev_epochs, prev_total = 0, 0
    for t in range(1, 40):
        for a in group:
            v = rng.standard_normal(d)
            a.local_update(v, None, float(rng.standard_normal()))
            shadow += np.outer(v, v)
        fired = server.end_of_round(group, t)
        local = sum(a.local_gram.matrix for a in group)
        np.testing.assert_allclose(server.state.w_syn.matrix + local, shadow, rtol=1e-12, atol=1e-12)
        epochs, total = server.state.epoch_count, server.meter.total
        assert epochs - prev_epochs == int(fired)
        assert total - prev_total == int(fired) * (m * 2 * (d * d + d) + 1)
        assert server.state.t_last <= t
        prev_epochs, prev_total = epochs, total


def test_immediate_server_charges_every_round():
    m, d, T = 3, 4, 7
    group = agents(m, d)
    server = Server(IMMEDIATE_SHARING, d, 1.0)
    for t in range(1, T + 1):
        for a in group:
            a.local_update(np.ones(d), None, 1.0)
        server.end_of_round(group, t)
    assert server.meter.total == T * (m * (d + 1) + m * (m - 1) * (d + 1))
