import pytest
from hypothesis import given
from hypothesis import strategies as st

from ops_driver import CHUNK, FakeRequest
from elasticmem.cpu_buffer import BufferConfig, BufferError, LogicalBuffer, Residency, ViolationDetector


def test_offload_consumes_logical_space():
    buf = LogicalBuffer(capacity=64, logical=20)
    r = FakeRequest(1)
    buf.offload(r, 15)
    assert buf.used == 15 and buf.available == 5
    assert r.kv_residency is Residency.CPU


def test_offload_into_full_buffer_fails():
    buf = LogicalBuffer(capacity=8, logical=4)
    buf.offload(FakeRequest(1), 4)
    with pytest.raises(BufferError):
        buf.offload(FakeRequest(2), 1)


def test_fetch_round_trip():
    buf = LogicalBuffer(capacity=64, logical=32)
    r = FakeRequest(1)
    buf.offload(r, 15)
    assert buf.fetch(r, 15, CHUNK) == 15 * CHUNK
    assert buf.used == 0 and r.kv_residency is Residency.GPU


def test_fetch_errors():
    buf = LogicalBuffer(capacity=64, logical=32)
    r = FakeRequest(1)
    with pytest.raises(BufferError):
        buf.fetch(r, 10, CHUNK)  # never offloaded
    buf.offload(r, 10)
    with pytest.raises(BufferError):
        buf.fetch(r, 9, CHUNK)  # GPU room not reserved


def test_scale_examples():
    buf = LogicalBuffer(capacity=16, logical=8)
    assert buf.scale(False, True) == 4
    buf = LogicalBuffer(capacity=16, logical=1)
    assert buf.scale(False, True) == 1
    buf = LogicalBuffer(capacity=16, logical=4)
    assert buf.scale(True, False) == 8
    assert buf.scale(True, False) == 16
    assert buf.scale(True, False) == 16
    assert buf.scale(False, False) == 16


def test_tpot_takes_priority():
    buf = LogicalBuffer(capacity=16, logical=8)
    assert buf.scale(True, True) == 4


def test_shrink_never_evicts():
    buf = LogicalBuffer(capacity=64, logical=32)
    buf.offload(FakeRequest(1), 30)
    buf.scale(False, True)
    assert buf.used == 30 and buf.logical == 16
    assert buf.available == 0
    with pytest.raises(BufferError):
        buf.offload(FakeRequest(2), 1)


@given(st.integers(1, 4096), st.integers(2, 4), st.lists(st.tuples(st.booleans(), st.booleans()), max_size=300))
def test_scale_stays_in_bounds(cap, alpha, events):
    buf = LogicalBuffer(capacity=cap, logical=1, alpha=alpha)
    for ttft, tpot in events:
        before = buf.logical
        after = buf.scale(ttft, tpot)
        assert 1 <= after <= cap
        if tpot:
            assert after <= before


def test_detector_threshold():
    det = ViolationDetector(slo_ttft=1.0, slo_tpot=0.1)
    assert det.record_iteration([], []) == (False, False)
    assert det.record_iteration([], [0.2]) == (False, False)
    assert det.record_iteration([], [0.2]) == (False, False)
    assert det.record_iteration([], [0.2]) == (False, True)


def test_detector_window_slides():
    det = ViolationDetector(slo_ttft=1.0, slo_tpot=0.1, window=5, threshold=3)
    det.record_iteration([2.0, 2.0], [])
    for _ in range(4):
        det.record_iteration([], [])
    assert det.record_iteration([2.0], []) == (False, False)


def test_detector_counts_strict_breaches_only():
    det = ViolationDetector(slo_ttft=1.0, slo_tpot=0.1)
    assert det.record_iteration([1.0, 1.0, 1.0], [0.1, 0.1, 0.1]) == (False, False)


def test_detector_and_config_validation():
    with pytest.raises(ValueError):
        ViolationDetector(1.0, 1.0, window=2, threshold=3)
    with pytest.raises(ValueError):
        BufferConfig(alpha=1.0)
    with pytest.raises(ValueError):
        LogicalBuffer(capacity=4, logical=5)
    cfg = BufferConfig()
    assert (cfg.alpha, cfg.window, cfg.threshold, cfg.initial_logical) == (2.0, 5, 3, 1)
