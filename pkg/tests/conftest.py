import pytest

from elasticmem.footprint import GiB, DeviceSpec, ModelSpec

# Tiny model/device pair so engine tests run in milliseconds.
# KV: 2*4*2*64*2 = 2048 B/token -> 1024 tokens per 2 MiB chunk.
TINY_MODEL = ModelSpec(
    name="tiny",
    n_layers=4,
    hidden=256,
    n_heads=4,
    n_kv_heads=2,
    head_dim=64,
    n_params=100_000_000,
    max_context=16384,
    act_coeff=16.0,
)
TINY_DEVICE = DeviceSpec(
    name="tiny-gpu",
    hbm_bytes=1 * GiB,
    mem_bw=1.0e12,
    compute_rate=1.0e13,
)


@pytest.fixture
def tiny_model():
    return TINY_MODEL


@pytest.fixture
def tiny_device():
    return TINY_DEVICE


# -- acceptance summary ------------------------------------------------------------------

ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE_KEY, {})


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        name, ok, detail = results[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:>2}. {name}: {detail}")
