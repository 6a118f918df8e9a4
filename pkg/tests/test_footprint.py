import dataclasses
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from elasticmem import footprint as fp
from elasticmem.footprint import GiB, DeviceSpec, ModelSpec

LLAMA = fp.LLAMA3_8B_262K
A100 = fp.A100_80GB


def _model(**kw):
    base = dict(name="m", n_layers=32, hidden=4096, n_heads=32, n_kv_heads=8, head_dim=128,
                n_params=8_000_000_000, dtype_bytes=2, max_context=4096, act_coeff=24.0)
    base.update(kw)
    return ModelSpec(**base)


# -- byte sizing -----------------------------------------------------------------------

def test_kv_bytes_llama_like():
    assert fp.kv_bytes_per_token(_model()) == 131072


def test_kv_bytes_unit_case():
    m = _model(n_layers=1, n_heads=1, n_kv_heads=1, head_dim=1, dtype_bytes=1)
    assert fp.kv_bytes_per_token(m) == 2


@given(st.integers(1, 128))
def test_kv_bytes_linear_in_layers(layers):
    one = fp.kv_bytes_per_token(_model(n_layers=layers))
    assert fp.kv_bytes_per_token(_model(n_layers=2 * layers)) == 2 * one


def test_activation_bytes_examples():
    m = _model()
    assert fp.activation_bytes(m, 0) == 0
    assert fp.activation_bytes(m, 2048) == 402653184


@given(st.integers(0, 10**6), st.integers(0, 10**6))
def test_activation_bytes_additive(a, b):
    m = _model()
    assert fp.activation_bytes(m, a + b) == fp.activation_bytes(m, a) + fp.activation_bytes(m, b)


def test_activation_bytes_rejects_negative():
    with pytest.raises(ValueError):
        fp.activation_bytes(_model(), -1)


def test_weights_bytes():
    assert fp.weights_bytes(_model()) == 1.6e10
    assert fp.weights_bytes(_model(n_params=0)) == 0
    assert fp.weights_bytes(_model(dtype_bytes=1)) * 2 == fp.weights_bytes(_model(dtype_bytes=2))


def test_chunks_for_max_context_span():
    # 262144 tokens * 131072 B / 2 MiB
    assert fp.kv_chunks(LLAMA, A100, 262144) == 16384


# -- composition ------------------------------------------------------------------------

def test_composition_activation_grows_with_context():
    short = fp.composition_report(LLAMA, A100, 2048, 1)
    long = fp.composition_report(LLAMA, A100, 200_000, 1)
    assert long.activation > short.activation


def test_composition_preset_matches_reported_shares():
    # the preset is calibrated to roughly 0.3% at 2K and 30.8% at 200K
    assert fp.composition_report(LLAMA, A100, 2048, 1).activation == pytest.approx(0.003, abs=0.001)
    assert fp.composition_report(LLAMA, A100, 200_000, 1).activation == pytest.approx(0.308, abs=0.01)


def test_composition_zero_concurrency():
    assert fp.composition_report(LLAMA, A100, 2048, 0).activation == 0


def test_composition_exact_shares():
    m = _model(n_params=8_030_000_000)
    w, a, k = fp.composition_report(m, A100, 2048, 1)
    hbm = 80 * GiB
    assert w == 1.606e10 / hbm
    assert a == 0.0046875  # 402653184 / 80 GiB
    assert k == (hbm - 1.606e10 - 402653184) / hbm


@given(st.integers(0, 300_000), st.integers(0, 64))
def test_composition_shares_bounded(context, conc):
    shares = fp.composition_report(LLAMA, A100, context, conc)
    assert all(s >= 0 for s in shares)
    assert sum(shares) <= 1 + 1e-12


def test_composition_model_does_not_fit():
    with pytest.raises(fp.ModelDoesNotFit):
        fp.composition_report(_model(n_params=10**12), A100, 2048, 1)


# -- latency ----------------------------------------------------------------------------

@given(st.integers(1, 300_000))
def test_prefill_superlinear(n):
    assert fp.prefill_latency(LLAMA, A100, 2 * n) > 2 * fp.prefill_latency(LLAMA, A100, n)


def test_prefill_single_token():
    a, b = fp.prefill_coefficients(LLAMA, A100)
    assert fp.prefill_latency(LLAMA, A100, 1) == a + b
    assert math.isfinite(a + b)


@pytest.mark.parametrize("n, expected", [
    (1024, 0.08360158953472),
    (2048, 0.16995195813888),
    (4096, 0.35089903255552),
])
def test_prefill_polynomial_values(n, expected):
    assert fp.prefill_latency(LLAMA, A100, n) == pytest.approx(expected, rel=1e-12)


def test_decode_base_case():
    base = fp.weights_bytes(LLAMA) / A100.mem_bw + fp.decode_token_overhead(LLAMA, A100)
    assert fp.decode_step_latency(LLAMA, A100, 1, 0) == pytest.approx(base, rel=1e-12)


@given(st.integers(1, 256), st.integers(0, 10**11))
def test_decode_affine_in_kv(batch, kv):
    lo = fp.decode_step_latency(LLAMA, A100, batch, kv)
    hi = fp.decode_step_latency(LLAMA, A100, batch, 2 * kv)
    assert hi - lo == pytest.approx(kv / A100.mem_bw, rel=1e-9, abs=1e-15)


def test_decode_batching_amortizes():
    steps = [fp.decode_step_latency(LLAMA, A100, b, 0) for b in range(1, 65)]
    per_token = [s / b for b, s in zip(range(1, 65), steps)]
    assert all(x > y for x, y in zip(per_token, per_token[1:]))
    assert steps[-1] < 64 * steps[0]


def test_transfer_time():
    d = dataclasses.replace(A100, xfer_bw=25e9)
    assert fp.transfer_time(d, 0) == 0
    assert fp.transfer_time(d, 25_000_000_000) == 1.0
    assert fp.transfer_time(d, 50_000_000_000) == 2 * fp.transfer_time(d, 25_000_000_000)


def test_overlap_examples():
    assert fp.offload_overlap_delay(1.0, 0.3, 32) == 0
    assert fp.offload_overlap_delay(1.0, 0.0, 32) == 0
    assert fp.offload_overlap_delay(1.0, 0.3, 1) == 0.3


@given(st.floats(0, 100), st.floats(0, 100), st.integers(1, 128))
def test_overlap_hidden_iff_under_budget(compute, xfer, layers):
    delay = fp.offload_overlap_delay(compute, xfer, layers)
    assert delay >= 0
    if xfer <= compute * (layers - 1) / layers:
        assert delay == 0
    else:
        assert delay == pytest.approx(xfer - compute * (layers - 1) / layers)


# -- spec validation --------------------------------------------------------------------

@pytest.mark.parametrize("field, value", [("n_layers", 0), ("hidden", -1), ("act_coeff", 0), ("n_params", -5)])
def test_model_spec_rejects_bad_fields(field, value):
    with pytest.raises(ValueError):
        _model(**{field: value})


def test_model_spec_kv_heads_bound():
    with pytest.raises(ValueError):
        _model(n_kv_heads=64)


def test_device_spec_chunk_power_of_two():
    with pytest.raises(ValueError):
        dataclasses.replace(A100, chunk_bytes=3 << 20)
    with pytest.raises(ValueError):
        DeviceSpec("d", hbm_bytes=GiB, mem_bw=1.0, compute_rate=1.0, chunk_bytes=-2)
