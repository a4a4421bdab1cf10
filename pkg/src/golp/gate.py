"""Cost-accounted dispatch: estimate both paths, apply guard and margin, run.

The gate offloads a query only when the estimated host cost exceeds the
estimated device cost by more than a configurable margin; ties and everything
below an optional row-count guard stay on the host, the safe default. The
decision record keeps both estimates so a sweep can be audited offline.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, replace
from typing import Optional, Sequence

from .device import (
    DEFAULT_MODELED_PROFILE,
    KEY_ONLY,
    MODES,
    OP_PROBE,
    OP_TOPK,
    DeviceProfile,
    ModeledDevice,
    estimate_device_cost,
)
from .errors import CalibrationError
from .host import host_hash_build, host_hash_probe, host_topk
from .store import ColumnTable, extract_keys, materialize

HOST = "host"
DEVICE = "device"

OP_FULL_SORT = "full_sort"
_SORT_FAMILY = (OP_TOPK, OP_FULL_SORT)


@dataclass(frozen=True)
class CpuCostModel:
    """Host cost bases: alpha_sort*n*log2(n)+beta_sort and alpha_match*n*k+beta_match."""

    alpha_sort: float
    beta_sort: float
    alpha_match: float
    beta_match: float

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if value < 0.0:
                raise ValueError(f"cpu model coefficient {name} must be non-negative")

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, obj: dict) -> "CpuCostModel":
        return cls(**{k: float(obj[k]) for k in (
            "alpha_sort", "beta_sort", "alpha_match", "beta_match")})


# Paired with DEFAULT_MODELED_PROFILE; see that constant for the regime the
# two sets of defaults are tuned to reproduce together.
DEFAULT_CPU_MODEL = CpuCostModel(
    alpha_sort=1.2e-10,
    beta_sort=5e-6,
    alpha_match=5e-10,
    beta_match=5e-6,
)


@dataclass(frozen=True)
class GateConfig:
    margin_s: float = 0.0
    min_n_guard: Optional[int] = None
    cpu_model: CpuCostModel = DEFAULT_CPU_MODEL
    profile: DeviceProfile = DEFAULT_MODELED_PROFILE
    mode: str = KEY_ONLY

    def __post_init__(self) -> None:
        if self.margin_s < 0.0:
            raise ValueError("margin_s must be non-negative")
        if self.min_n_guard is not None and self.min_n_guard < 0:
            raise ValueError("min_n_guard must be non-negative when set")
        if self.mode not in MODES:
            raise ValueError(f"unknown transfer mode {self.mode!r}")

    def to_json_dict(self) -> dict:
        return {
            "margin_s": self.margin_s,
            "min_n_guard": self.min_n_guard,
            "cpu_model": self.cpu_model.to_json_dict(),
            "profile": self.profile.to_json_dict(),
            "mode": self.mode,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "GateConfig":
        kwargs = {}
        if "margin_s" in obj:
            kwargs["margin_s"] = float(obj["margin_s"])
        if "min_n_guard" in obj:
            guard = obj["min_n_guard"]
            kwargs["min_n_guard"] = None if guard is None else int(guard)
        if "cpu_model" in obj:
            kwargs["cpu_model"] = CpuCostModel.from_json_dict(obj["cpu_model"])
        if "profile" in obj:
            kwargs["profile"] = DeviceProfile.from_json_dict(obj["profile"])
        if "mode" in obj:
            kwargs["mode"] = str(obj["mode"])
        return cls(**kwargs)


@dataclass(frozen=True)
class GateDecision:
    path: str
    c_cpu_est: float
    c_gpu_est: float
    gain: float
    guard_triggered: bool
    margin_used: float


def estimate_cpu_cost(model: CpuCostModel, op: str, n: int, k: int = 1) -> float:
    if n < 0:
        raise ValueError("n must be non-negative")
    if op in _SORT_FAMILY:
        return model.alpha_sort * n * math.log2(max(n, 2)) + model.beta_sort
    if op == OP_PROBE:
        return model.alpha_match * n * k + model.beta_match
    raise ValueError(f"unknown op {op!r}")


def decide(
    config: GateConfig,
    op: str,
    n: int,
    k: int = 1,
    payload_bytes: Optional[int] = None,
    build_n: int = 0,
) -> GateDecision:
    """Pure decision rule: guard first, then strict gain > margin.

    For probes, n is the probe-side row count (the cpu model's input) and
    build_n the build side, so the device estimate covers both transfers.
    """
    guard = config.min_n_guard is not None and n < config.min_n_guard
    c_cpu = estimate_cpu_cost(config.cpu_model, op, n, k)
    device_n = n + build_n if op == OP_PROBE else n
    c_gpu = estimate_device_cost(
        op, device_n, k, config.mode, payload_bytes, config.profile
    ).total
    gain = c_cpu - c_gpu
    path = DEVICE if (not guard and gain > config.margin_s) else HOST
    return GateDecision(
        path=path,
        c_cpu_est=c_cpu,
        c_gpu_est=c_gpu,
        gain=gain,
        guard_triggered=guard,
        margin_used=config.margin_s,
    )


def _wall() -> float:
    return time.perf_counter_ns() / 1e9


def execute_path(tables, op: str, k: int, config: GateConfig, device, path: str):
    """Run one query down a fixed path; returns (result, observed_latency).

    The modeled backend reports virtual time (the cost model for the host
    path, the call ledger for the device path); any other backend is
    wall-clock timed end to end, late materialization included.
    """
    modeled = getattr(device, "name", None) == "modeled"
    if modeled:
        result, ledger_total, n, _ = _run_query(tables, op, k, config, device, path)
        if path == DEVICE:
            return result, ledger_total
        return result, estimate_cpu_cost(config.cpu_model, op, n, k)
    t0 = _wall()
    result, _, _, _ = _run_query(tables, op, k, config, device, path)
    return result, _wall() - t0


def _run_query(tables, op: str, k: int, config: GateConfig, device, path: str):
    if op == OP_TOPK:
        table: ColumnTable = tables
        keys = extract_keys(table)
        if path == DEVICE:
            call = device.topk(keys, k, mode=config.mode, payload_bytes=table.payload_bytes)
            rows = call.payload.rows
            ledger_total = call.ledger.total
        else:
            rows = host_topk(keys, k).rows
            ledger_total = None
        result = materialize(table, rows)
        return result, ledger_total, table.row_count, 0
    if op == OP_PROBE:
        build_table, probe_table = tables
        build_keys = extract_keys(build_table)
        probe_keys = extract_keys(probe_table)
        if path == DEVICE:
            call = device.probe(
                build_keys, probe_keys,
                mode=config.mode, payload_bytes=probe_table.payload_bytes,
            )
            result = call.payload
            ledger_total = call.ledger.total
        else:
            result = host_hash_probe(host_hash_build(build_keys), probe_keys)
            ledger_total = None
        return result, ledger_total, probe_table.row_count, build_table.row_count
    raise ValueError(f"unknown op {op!r}")


def execute_gated(tables, op: str, k: int, config: GateConfig, device=None):
    """Decide, then run the chosen path; returns (result, decision, latency)."""
    if device is None:
        device = ModeledDevice(config.profile)
    if op == OP_TOPK:
        n = tables.row_count
        build_n = 0
        payload_bytes = tables.payload_bytes
    elif op == OP_PROBE:
        build_table, probe_table = tables
        n = probe_table.row_count
        build_n = build_table.row_count
        payload_bytes = probe_table.payload_bytes
    else:
        raise ValueError(f"unknown op {op!r}")
    decision = decide(config, op, n, k, payload_bytes, build_n)
    result, observed = execute_path(tables, op, k, config, device, decision.path)
    return result, decision, observed


def _nonneg_line_fit(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float]:
    """OLS slope/intercept with both coefficients clamped at zero."""
    n = len(xs)
    xbar = math.fsum(xs) / n
    ybar = math.fsum(ys) / n
    sxx = math.fsum((x - xbar) ** 2 for x in xs)
    if sxx == 0.0:
        raise CalibrationError("degenerate design matrix: all sizes equal")
    sxy = math.fsum((x - xbar) * (y - ybar) for x, y in zip(xs, ys))
    slope = sxy / sxx
    intercept = ybar - slope * xbar
    if slope < 0.0:
        slope = 0.0
        intercept = max(0.0, ybar)
    elif intercept < 0.0:
        intercept = 0.0
        sx2 = math.fsum(x * x for x in xs)
        slope = max(0.0, math.fsum(x * y for x, y in zip(xs, ys)) / sx2) if sx2 else 0.0
    return slope, intercept


def calibrate_cpu_model(samples: Sequence[tuple]) -> CpuCostModel:
    """Least-squares cpu constants from (op, n, k, measured_seconds) samples.

    Each op family present needs at least 3 distinct n. Coefficients are
    clamped at zero; a calibration where nothing grows is rejected.
    """
    sort_pts: list[tuple[float, float]] = []
    match_pts: list[tuple[float, float]] = []
    sort_ns: set[int] = set()
    match_ns: set[int] = set()
    for op, n, k, seconds in samples:
        if op in _SORT_FAMILY:
            sort_pts.append((n * math.log2(max(n, 2)), seconds))
            sort_ns.add(int(n))
        elif op == OP_PROBE:
            match_pts.append((float(n) * k, seconds))
            match_ns.add(int(n))
        else:
            raise ValueError(f"unknown op {op!r}")

    alpha_sort = beta_sort = alpha_match = beta_match = 0.0
    if sort_pts:
        if len(sort_ns) < 3:
            raise CalibrationError("sort-family calibration needs >= 3 distinct n")
        alpha_sort, beta_sort = _nonneg_line_fit(*zip(*sort_pts))
    if match_pts:
        if len(match_ns) < 3:
            raise CalibrationError("match-family calibration needs >= 3 distinct n")
        alpha_match, beta_match = _nonneg_line_fit(*zip(*match_pts))
    if not sort_pts and not match_pts:
        raise CalibrationError("no calibration samples")
    if alpha_sort == 0.0 and alpha_match == 0.0:
        raise CalibrationError("calibration found no growth in either op family")
    return CpuCostModel(
        alpha_sort=alpha_sort,
        beta_sort=beta_sort,
        alpha_match=alpha_match,
        beta_match=beta_match,
    )


def with_margin(config: GateConfig, margin_s: float) -> GateConfig:
    return replace(config, margin_s=margin_s)
