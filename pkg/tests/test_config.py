import json

import pytest
import yaml

from elasticmem import footprint as fp
from elasticmem.config import (ConfigError, TraceError, config_from_dict, config_to_dict, dump_config,
                               ingest_trace, parse_config)
from elasticmem.sim import Mode
from elasticmem.workload import WorkloadKind


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_minimal_file_fills_defaults(tmp_path):
    cfg = parse_config(_write(tmp_path, "c.yaml", "{}\n"))
    total = fp.A100_80GB.total_chunks - fp.bytes_to_chunks(fp.weights_bytes(fp.LLAMA3_8B_262K), 2 << 20)
    assert cfg.scheduler.theta == int(0.02 * total)
    assert cfg.buffer.alpha == 2 and cfg.buffer.window == 5 and cfg.buffer.threshold == 3
    assert cfg.slo_multiplier == 25
    assert cfg.mode is Mode.ELASTIC
    assert cfg.model == fp.LLAMA3_8B_262K and cfg.device == fp.A100_80GB


def test_empty_file_is_valid(tmp_path):
    assert parse_config(_write(tmp_path, "c.yaml", "")).seed == 0


def test_negative_chunk_bytes_is_field_error():
    with pytest.raises(ConfigError) as e:
        config_from_dict({"device": {"preset": "a100-80gb", "chunk_bytes": -2}})
    assert any("chunk_bytes" in err for err in e.value.errors)


def test_unknown_keys_are_named():
    with pytest.raises(ConfigError) as e:
        config_from_dict({"bogus": 1, "buffer": {"alhpa": 2}})
    assert "bogus: unknown key" in e.value.errors
    assert "buffer.alhpa: unknown key" in e.value.errors


def test_errors_are_collected():
    with pytest.raises(ConfigError) as e:
        config_from_dict({"mode": "fast", "seed": -1, "scheduler": {"theta_fraction": "x"}})
    assert len(e.value.errors) == 3


def test_type_errors():
    with pytest.raises(ConfigError):
        config_from_dict({"buffer": {"window": 2.5}})
    with pytest.raises(ConfigError):
        config_from_dict({"workload": {"count": True}})


def test_custom_model_requires_all_fields():
    with pytest.raises(ConfigError) as e:
        config_from_dict({"model": {"name": "x", "n_layers": 2}})
    assert "missing" in e.value.errors[0]


def test_preset_override_and_exponent_strings():
    cfg = config_from_dict({"device": {"preset": "a100-80gb", "xfer_bw": "32e9"}, "model": "llama3-8b-262k"})
    assert cfg.device.xfer_bw == 32e9
    assert cfg.device.hbm_bytes == fp.A100_80GB.hbm_bytes


def test_unknown_preset():
    with pytest.raises(ConfigError):
        config_from_dict({"model": "gpt-9"})


def test_invariant_violation_reported():
    with pytest.raises(ConfigError):
        config_from_dict({"buffer": {"window": 2, "threshold": 3}})
    with pytest.raises(ConfigError):
        config_from_dict({"scheduler": {"theta": 10**9}})


def test_round_trip(tmp_path):
    raw = {"workload": {"kind": "fixed_batch", "count": 6, "input_tokens": 131072, "output_tokens": 8192},
           "buffer": {"alpha": 4}, "seed": 9, "mode": "static", "output": "out/r.json"}
    cfg = config_from_dict(raw)
    again = config_from_dict(yaml.safe_load(dump_config(cfg)))
    assert again == cfg
    assert config_from_dict(json.loads(json.dumps(config_to_dict(cfg)))) == cfg


def test_round_trip_with_trace(tmp_path):
    trace = _write(tmp_path, "t.jsonl", '{"arrival_s": 0, "input_tokens": 5, "output_tokens": 2}\n')
    cfg = parse_config(_write(tmp_path, "c.yaml", "workload: {trace: t.jsonl}\n"))
    assert cfg.workload.kind is WorkloadKind.TRACE
    assert config_from_dict(config_to_dict(cfg)) == cfg
    assert trace.exists()


def test_seed_applies_to_workload():
    assert config_from_dict({"seed": 4}).workload.seed == 4


# -- traces ------------------------------------------------------------------------------

def test_trace_three_lines(tmp_path):
    p = _write(tmp_path, "t.jsonl", "".join(
        json.dumps({"arrival_s": i * 0.5, "input_tokens": 10, "output_tokens": 3}) + "\n" for i in range(3)))
    wl = ingest_trace(p)
    assert wl.count == 3 and len(wl.records) == 3


def test_trace_bad_length_names_line(tmp_path):
    p = _write(tmp_path, "t.jsonl",
               '{"arrival_s": 0, "input_tokens": 4, "output_tokens": 1}\n'
               '{"arrival_s": 1, "input_tokens": 0, "output_tokens": 1}\n')
    with pytest.raises(TraceError, match=":2:"):
        ingest_trace(p)


@pytest.mark.parametrize("line", ["not json", "[1, 2]", '{"arrival_s": 1}', '{"arrival_s": -1, "input_tokens": 1, "output_tokens": 1}'])
def test_trace_malformed(tmp_path, line):
    with pytest.raises(TraceError, match=":1:"):
        ingest_trace(_write(tmp_path, "t.jsonl", line + "\n"))


def test_trace_unsorted_is_sorted_with_warning(tmp_path):
    p = _write(tmp_path, "t.jsonl", "".join(
        json.dumps({"arrival_s": t, "input_tokens": 1, "output_tokens": 1}) + "\n" for t in (3.0, 1.0, 2.0)))
    with pytest.warns(UserWarning, match="not sorted"):
        wl = ingest_trace(p)
    times = [r[0] for r in wl.records]
    assert times == sorted(times) == [1.0, 2.0, 3.0]


def test_trace_errors_surface_as_config_errors(tmp_path):
    _write(tmp_path, "t.jsonl", "oops\n")
    with pytest.raises(ConfigError, match="workload.trace"):
        parse_config(_write(tmp_path, "c.yaml", "workload: {trace: t.jsonl}\n"))


ROOT = __import__("pathlib").Path(__file__).resolve().parents[1]


@pytest.mark.parametrize("name", ["long.yaml", "online.yaml"])
def test_shipped_configs_parse(name):
    parse_config(ROOT / "configs" / name)


def test_readme_config_block_parses():
    text = (ROOT / "README.md").read_text()
    block = text.split("```yaml\n", 1)[1].split("```", 1)[0]
    assert config_from_dict(yaml.safe_load(block)).mode is Mode.ELASTIC
