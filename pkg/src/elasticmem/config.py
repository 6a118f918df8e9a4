"""Experiment configuration files and request traces.

A config is one YAML document (JSON works too) whose top-level sections
mirror the component types::

    model: llama3-8b-262k          # preset name, or a mapping of ModelSpec fields
    device: {preset: a100-80gb, xfer_bw: 32.0e9}
    scheduler: {theta_fraction: 0.02}
    buffer: {capacity_chunks: 65536, alpha: 2}
    workload: {kind: poisson, rate: 1.5, count: 300}
    mode: elastic
    slo_multiplier: 25
    seed: 0
    output: out/report.json

Every section is optional. Unknown keys are errors, and all problems are
collected before anything is raised.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from . import footprint as fp
from .cpu_buffer import BufferConfig
from .footprint import DeviceSpec, ModelSpec
from .scheduler import SchedulerConfig
from .sim import Mode, SimConfig
from .workload import WorkloadKind, WorkloadSpec

PathLike = Union[str, Path]


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


class TraceError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    model: ModelSpec = fp.LLAMA3_8B_262K
    device: DeviceSpec = fp.A100_80GB
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    buffer: BufferConfig = field(default_factory=BufferConfig)
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    mode: Mode = Mode.ELASTIC
    slo_multiplier: float = 25.0
    seed: int = 0
    output: Optional[str] = None

    def sim_config(self) -> SimConfig:
        return SimConfig(self.model, self.device, self.scheduler, self.buffer, self.workload, self.slo_multiplier)


# -- trace ingestion -----------------------------------------------------------------

def ingest_trace(path: PathLike) -> WorkloadSpec:
    """Read a JSON-lines trace of {arrival_s, input_tokens, output_tokens} records."""
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise TraceError(f"{path}:{lineno}: malformed JSON ({e.msg})") from None
            if not isinstance(rec, dict):
                raise TraceError(f"{path}:{lineno}: expected an object")
            missing = {"arrival_s", "input_tokens", "output_tokens"} - rec.keys()
            if missing:
                raise TraceError(f"{path}:{lineno}: missing {', '.join(sorted(missing))}")
            arrival, n_in, n_out = rec["arrival_s"], rec["input_tokens"], rec["output_tokens"]
            if isinstance(arrival, bool) or not isinstance(arrival, (int, float)) or arrival < 0:
                raise TraceError(f"{path}:{lineno}: arrival_s must be a number >= 0")
            for name, v in (("input_tokens", n_in), ("output_tokens", n_out)):
                if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                    raise TraceError(f"{path}:{lineno}: {name} must be an integer >= 1")
            records.append((float(arrival), n_in, n_out))
    ordered = sorted(records, key=lambda r: r[0])
    if ordered != records:
        warnings.warn(f"{path}: arrivals were not sorted; reordered by arrival_s", stacklevel=2)
    return WorkloadSpec(WorkloadKind.TRACE, count=len(ordered), records=ordered, trace_path=str(path))


# -- parsing --------------------------------------------------------------------------

_SECTION_TYPES = {
    "scheduler": SchedulerConfig,
    "buffer": BufferConfig,
}
_WORKLOAD_KEYS = {"kind", "rate", "input_tokens", "output_tokens", "count", "trace"}
_TOP_KEYS = {"model", "device", "scheduler", "buffer", "workload", "mode", "slo_multiplier", "seed", "output"}


def _coerce(value: Any, annotation: str) -> tuple[bool, Any]:
    """(ok, value) for a primitive field; enums and other types defer to the constructor."""
    optional = annotation.startswith("Optional[")
    base = annotation[len("Optional["):-1] if optional else annotation
    if value is None:
        return optional, value
    if base not in ("int", "float", "bool", "str"):
        return True, value
    if isinstance(value, bool):
        return base == "bool", value
    if base == "int":
        return isinstance(value, int), value
    if base == "float":
        if isinstance(value, str):
            # YAML 1.1 reads "25e9" as a string
            try:
                return True, float(value)
            except ValueError:
                return False, value
        return isinstance(value, (int, float)), value
    return isinstance(value, str), value


def _build(cls, data: Any, prefix: str, errors: list[str], base=None, skip=frozenset()):
    """Instantiate dataclass ``cls`` from a mapping, recording field-level errors."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        errors.append(f"{prefix}: expected a mapping")
        return None
    fields = {f.name: f for f in dataclasses.fields(cls) if not f.name.startswith("_") and f.name not in skip}
    kwargs = dataclasses.asdict(base) if base is not None else {}
    ok = True
    for key, value in data.items():
        if key not in fields:
            errors.append(f"{prefix}.{key}: unknown key")
            ok = False
            continue
        good, value = _coerce(value, str(fields[key].type))
        if not good:
            errors.append(f"{prefix}.{key}: expected {fields[key].type}, got {type(value).__name__}")
            ok = False
            continue
        kwargs[key] = value
    if not ok:
        return None
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        errors.append(f"{prefix}: {e}")
        return None


def _build_spec(cls, presets: dict, data: Any, prefix: str, errors: list[str]):
    if isinstance(data, str):
        if data not in presets:
            errors.append(f"{prefix}: unknown preset {data!r} (known: {', '.join(sorted(presets))})")
            return None
        return presets[data]
    if isinstance(data, dict) and "preset" in data:
        data = dict(data)
        name = data.pop("preset")
        if name not in presets:
            errors.append(f"{prefix}.preset: unknown preset {name!r}")
            return None
        return _build(cls, data, prefix, errors, base=presets[name])
    if isinstance(data, dict):
        required = [f.name for f in dataclasses.fields(cls)
                    if f.default is dataclasses.MISSING and f.name not in data]
        if required:
            errors.append(f"{prefix}: missing field(s) {', '.join(required)}")
            return None
    return _build(cls, data, prefix, errors)


def config_from_dict(raw: Any, base_dir: Optional[Path] = None) -> ExperimentConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(["config: top level must be a mapping"])
    errors: list[str] = []
    for key in raw:
        if key not in _TOP_KEYS:
            errors.append(f"{key}: unknown key")

    model = _build_spec(ModelSpec, fp.MODELS, raw.get("model", fp.LLAMA3_8B_262K.name), "model", errors)
    device = _build_spec(DeviceSpec, fp.DEVICES, raw.get("device", fp.A100_80GB.name), "device", errors)
    sections = {name: _build(cls, raw.get(name), name, errors) for name, cls in _SECTION_TYPES.items()}

    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        errors.append("seed: expected an integer >= 0")
        seed = 0
    slo_multiplier = raw.get("slo_multiplier", 25.0)
    if isinstance(slo_multiplier, bool) or not isinstance(slo_multiplier, (int, float)) or slo_multiplier <= 0:
        errors.append("slo_multiplier: expected a number > 0")
    try:
        mode = Mode(raw.get("mode", Mode.ELASTIC.value))
    except ValueError:
        errors.append(f"mode: expected one of {[m.value for m in Mode]}")
        mode = Mode.ELASTIC
    output = raw.get("output")
    if output is not None and not isinstance(output, str):
        errors.append("output: expected a path string")

    workload = None
    wl_raw = raw.get("workload") or {}
    if not isinstance(wl_raw, dict):
        errors.append("workload: expected a mapping")
    else:
        for key in wl_raw:
            if key not in _WORKLOAD_KEYS:
                errors.append(f"workload.{key}: unknown key")
        trace = wl_raw.get("trace")
        body = {k: v for k, v in wl_raw.items() if k in _WORKLOAD_KEYS - {"trace"}}
        if trace is not None:
            trace_path = Path(trace)
            if base_dir is not None and not trace_path.is_absolute():
                trace_path = base_dir / trace_path
            try:
                workload = ingest_trace(trace_path)
            except (OSError, TraceError) as e:
                errors.append(f"workload.trace: {e}")
        else:
            kind = body.get("kind", WorkloadKind.POISSON.value)
            if kind not in [k.value for k in WorkloadKind]:
                errors.append(f"workload.kind: expected one of {[k.value for k in WorkloadKind]}")
            elif kind == WorkloadKind.TRACE.value:
                errors.append("workload.trace: required when kind is 'trace'")
            else:
                workload = _build(WorkloadSpec, body, "workload", errors,
                                  skip={"records", "trace_path", "seed"})

    sched = sections["scheduler"]
    if sched is not None and model is not None and device is not None:
        total = device.total_chunks - fp.bytes_to_chunks(fp.weights_bytes(model), device.chunk_bytes)
        if total <= 0:
            errors.append("model: weights do not fit on the device")
        else:
            try:
                sched.theta = sched.resolve_theta(total)
            except ValueError as e:
                errors.append(f"scheduler.theta: {e}")
    if model is not None and device is not None and not fp.model_fits(model, device):
        errors.append("model: weights do not fit on the device")

    if errors:
        raise ConfigError(errors)
    workload.seed = seed
    return ExperimentConfig(model, device, sched, sections["buffer"], workload, mode,
                            float(slo_multiplier), seed, output)


def parse_config(path: PathLike) -> ExperimentConfig:
    path = Path(path)
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as e:
            raise ConfigError([f"{path}: {e}"]) from None
    return config_from_dict(raw, base_dir=path.parent)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Fully expanded config; feeding it back to config_from_dict gives an equal config."""
    wl = cfg.workload
    if wl.kind is WorkloadKind.TRACE:
        workload = {"trace": str(Path(wl.trace_path).resolve())}
    else:
        workload = {"kind": wl.kind.value, "rate": wl.rate, "input_tokens": wl.input_tokens,
                    "output_tokens": wl.output_tokens, "count": wl.count}
    return {
        "model": dataclasses.asdict(cfg.model),
        "device": dataclasses.asdict(cfg.device),
        "scheduler": dataclasses.asdict(cfg.scheduler),
        "buffer": dataclasses.asdict(cfg.buffer),
        "workload": workload,
        "mode": cfg.mode.value,
        "slo_multiplier": cfg.slo_multiplier,
        "seed": cfg.seed,
        "output": cfg.output,
    }


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)
