"""Coprocessor abstraction: transfer phases, device kernels, per-call ledgers.

Two interchangeable backends:

* ``ModeledDevice`` runs on a virtual clock. Phase times are pure arithmetic
  over a ``DeviceProfile``; results come from the host primitives, so a
  modeled call can never change an answer. Repeated calls are bit-identical.
* ``ProxyDevice`` stands in for real hardware: transfers are real memcpys of
  exactly the accounted bytes, the kernel is a parallel per-chunk selection
  (or hash probe) on worker threads, and every phase is wall-clock timed.

Byte counts are always computed from the call shape, never measured, so both
backends report identical ``h2d_bytes``/``d2h_bytes`` for identical calls. A
key-only call ships 12 bytes per entry; a full-row call ships
(8 + payload_bytes) per row. Post-processing time is attributed to the
device-call ledger even though it runs on the host: the offload path's
end-to-end cost includes turning returned row ids back into rows.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import CalibrationError
from .host import (
    ROW_EMPTY,
    ProbeResult,
    TopKResult,
    host_hash_build,
    host_hash_probe,
    host_topk,
    key_bits,
    mix64_array,
)
from .store import KEY_BYTES, KEY_ENTRY_BYTES, ROW_ID_BYTES, KeyVector

KEY_ONLY = "key_only"
FULL_ROW = "full_row"
MODES = (KEY_ONLY, FULL_ROW)

OP_TOPK = "topk"
OP_PROBE = "probe"

_TINY_RATE = 1e-12


@dataclass(frozen=True)
class DeviceProfile:
    """Cost constants for one device. Bandwidths in bytes/s, times in seconds."""

    h2d_bandwidth: float
    d2h_bandwidth: float
    launch_overhead: float
    kernel_rate_topk: float
    kernel_rate_probe: float
    post_rate: float

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if not value > 0.0:
                raise ValueError(f"profile field {name} must be strictly positive")

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, obj: dict) -> "DeviceProfile":
        return cls(**{k: float(obj[k]) for k in (
            "h2d_bandwidth",
            "d2h_bandwidth",
            "launch_overhead",
            "kernel_rate_topk",
            "kernel_rate_probe",
            "post_rate",
        )})


# Chosen so the default configuration tells a coherent story: break-even
# against the default cpu model sits between 1e5 and 1e6 rows, dispatch
# margins of 0/5/10 ms move the switch point across the default grid, and a
# key-only Top-K at N=3e6 beats the full-row transfer end to end by >= 10x.
DEFAULT_MODELED_PROFILE = DeviceProfile(
    h2d_bandwidth=25e9,
    d2h_bandwidth=25e9,
    launch_overhead=200e-6,
    kernel_rate_topk=0.1e-9,
    kernel_rate_probe=0.2e-9,
    post_rate=20e-9,
)


@dataclass(frozen=True)
class TransferLedger:
    h2d_bytes: int
    d2h_bytes: int
    t_h2d: float
    t_kernel: float
    t_d2h: float
    t_post: float
    total: float

    @classmethod
    def build(
        cls,
        h2d_bytes: int,
        d2h_bytes: int,
        t_h2d: float,
        t_kernel: float,
        t_d2h: float,
        t_post: float,
    ) -> "TransferLedger":
        return cls(
            h2d_bytes=int(h2d_bytes),
            d2h_bytes=int(d2h_bytes),
            t_h2d=t_h2d,
            t_kernel=t_kernel,
            t_d2h=t_d2h,
            t_post=t_post,
            total=t_h2d + t_kernel + t_d2h + t_post,
        )


@dataclass
class DeviceCallResult:
    payload: object
    ledger: TransferLedger
    backend: str


class CostEstimate(NamedTuple):
    t_h2d: float
    t_kernel: float
    t_d2h: float
    t_post: float
    total: float


def transfer_entry_bytes(mode: str, payload_bytes: Optional[int]) -> int:
    if mode == KEY_ONLY:
        return KEY_ENTRY_BYTES
    if mode == FULL_ROW:
        if payload_bytes is None or payload_bytes < 1:
            raise ValueError("full_row transfers need a positive payload_bytes")
        return KEY_BYTES + int(payload_bytes)
    raise ValueError(f"unknown transfer mode {mode!r}")


def estimate_device_cost(
    op: str,
    n: int,
    k: int,
    mode: str = KEY_ONLY,
    payload_bytes: Optional[int] = None,
    profile: DeviceProfile = DEFAULT_MODELED_PROFILE,
) -> CostEstimate:
    """Predicted phase times for a device call; exact for the modeled backend.

    For probes, n counts both sides of the join and k stands in for the
    expected match count (actual ledgers use the true count).
    """
    h2d_bytes = transfer_entry_bytes(mode, payload_bytes) * n
    if op == OP_TOPK:
        returned = min(k, n)
        d2h_bytes = ROW_ID_BYTES * returned
        t_kernel = profile.launch_overhead + profile.kernel_rate_topk * n
    elif op == OP_PROBE:
        returned = k
        d2h_bytes = 2 * ROW_ID_BYTES * returned
        t_kernel = profile.launch_overhead + profile.kernel_rate_probe * n
    else:
        raise ValueError(f"unknown op {op!r}")
    t_h2d = h2d_bytes / profile.h2d_bandwidth
    t_d2h = d2h_bytes / profile.d2h_bandwidth
    t_post = profile.post_rate * returned
    return CostEstimate(t_h2d, t_kernel, t_d2h, t_post, t_h2d + t_kernel + t_d2h + t_post)


class ModeledDevice:
    """Virtual device: real results, arithmetic ledger, no wall clock."""

    name = "modeled"

    def __init__(self, profile: DeviceProfile = DEFAULT_MODELED_PROFILE):
        self.profile = profile

    def topk(
        self,
        keys: KeyVector,
        k: int,
        mode: str = KEY_ONLY,
        payload_bytes: Optional[int] = None,
    ) -> DeviceCallResult:
        payload = host_topk(keys, k)
        est = estimate_device_cost(OP_TOPK, len(keys), k, mode, payload_bytes, self.profile)
        ledger = TransferLedger.build(
            h2d_bytes=transfer_entry_bytes(mode, payload_bytes) * len(keys),
            d2h_bytes=ROW_ID_BYTES * len(payload.rows),
            t_h2d=est.t_h2d,
            t_kernel=est.t_kernel,
            t_d2h=est.t_d2h,
            t_post=est.t_post,
        )
        return DeviceCallResult(payload=payload, ledger=ledger, backend=self.name)

    def probe(
        self,
        build: KeyVector,
        probe: KeyVector,
        mode: str = KEY_ONLY,
        payload_bytes: Optional[int] = None,
    ) -> DeviceCallResult:
        payload = host_hash_probe(host_hash_build(build), probe)
        n = len(build) + len(probe)
        matches = payload.match_count
        profile = self.profile
        h2d_bytes = transfer_entry_bytes(mode, payload_bytes) * n
        d2h_bytes = 2 * ROW_ID_BYTES * matches
        ledger = TransferLedger.build(
            h2d_bytes=h2d_bytes,
            d2h_bytes=d2h_bytes,
            t_h2d=h2d_bytes / profile.h2d_bandwidth,
            t_kernel=profile.launch_overhead + profile.kernel_rate_probe * n,
            t_d2h=d2h_bytes / profile.d2h_bandwidth,
            t_post=profile.post_rate * matches,
        )
        return DeviceCallResult(payload=payload, ledger=ledger, backend=self.name)


def _now() -> float:
    return time.perf_counter_ns() / 1e9


def _chunk_topk_candidates(keys: np.ndarray, rows: np.ndarray, k: int):
    """Exact top-min(k, len) of one chunk under (key desc, row id asc)."""
    m = len(keys)
    if m <= k:
        return keys, rows
    kth = m - k
    top_pos = np.argpartition(keys, kth)[kth:]
    boundary = keys[top_pos].min()
    greater_pos = np.flatnonzero(keys > boundary)
    need = k - len(greater_pos)
    eq_pos = np.flatnonzero(keys == boundary)
    if len(eq_pos) > need:
        # ties at the boundary resolve toward smaller row ids
        eq_pos = eq_pos[np.argsort(rows[eq_pos], kind="stable")[:need]]
    pos = np.concatenate([greater_pos, eq_pos])
    return keys[pos], rows[pos]


def _merge_topk_candidates(keys: np.ndarray, rows: np.ndarray, k: int) -> np.ndarray:
    order = np.lexsort((rows, -keys))
    return rows[order[: min(k, len(keys))]].astype(np.uint32, copy=False)


def _probe_chunk(table, bits_chunk: np.ndarray, probe_rows_chunk: np.ndarray):
    """Vectorized linear-probing scan; match order equals the host scan."""
    m = len(bits_chunk)
    empty = (np.empty(0, dtype=np.uint32), np.empty(0, dtype=np.uint32))
    if m == 0 or table.build_count == 0:
        return empty
    mask = table.mask
    slot_bits = table.slot_bits
    slot_rows = table.slot_rows
    cur = (mix64_array(bits_chunk) & np.uint64(mask)).astype(np.intp)
    active = np.arange(m, dtype=np.intp)
    hits_pos: list[np.ndarray] = []
    hits_build: list[np.ndarray] = []
    for _ in range(table.capacity + 1):
        srow = slot_rows[cur]
        alive = srow != ROW_EMPTY
        if not alive.all():
            active = active[alive]
            cur = cur[alive]
            srow = srow[alive]
            if active.size == 0:
                break
        hit = slot_bits[cur] == bits_chunk[active]
        if hit.any():
            hits_pos.append(active[hit])
            hits_build.append(srow[hit])
        cur = (cur + 1) & mask
    if not hits_pos:
        return empty
    pos = np.concatenate(hits_pos)
    build_rows = np.concatenate(hits_build)
    # frames were appended in probe-distance order; a stable sort by probe
    # position therefore yields (probe order, then build insertion order)
    order = np.argsort(pos, kind="stable")
    return probe_rows_chunk[pos[order]], build_rows[order]


class ProxyDevice:
    """In-process stand-in for real hardware, wall-clock timed.

    The kernel phase runs the selection/probe chunk-parallel on a thread
    pool; h2d/d2h phases are real copies of exactly the accounted bytes.
    """

    name = "proxy"

    def __init__(self, workers: Optional[int] = None):
        self.workers = max(1, workers if workers is not None else (os.cpu_count() or 1))
        self._pool = ThreadPoolExecutor(max_workers=self.workers) if self.workers > 1 else None

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def _chunk_bounds(self, n: int, floor: int) -> list[tuple[int, int]]:
        chunks = min(self.workers, max(1, n // max(floor, 1)))
        if chunks <= 1:
            return [(0, n)]
        step = (n + chunks - 1) // chunks
        return [(lo, min(lo + step, n)) for lo in range(0, n, step)]

    def _map(self, fn, spans):
        if self._pool is None or len(spans) == 1:
            return [fn(span) for span in spans]
        return list(self._pool.map(fn, spans))

    def topk(
        self,
        keys: KeyVector,
        k: int,
        mode: str = KEY_ONLY,
        payload_bytes: Optional[int] = None,
    ) -> DeviceCallResult:
        if k < 1:
            raise ValueError("k must be at least 1")
        n = len(keys)
        entry = transfer_entry_bytes(mode, payload_bytes)
        # only the accounted bytes are copied inside the timed window; in
        # full-row mode row ids ride along as unaccounted plumbing
        if mode == FULL_ROW:
            dev_rows = keys.rows.copy()
            t0 = _now()
            dev_keys = keys.keys.copy()
            np.empty(n * int(payload_bytes), dtype=np.uint8).copy()
            t1 = _now()
        else:
            t0 = _now()
            dev_keys = keys.keys.copy()
            dev_rows = keys.rows.copy()
            t1 = _now()

        spans = self._chunk_bounds(n, floor=max(4 * k, 4096))

        def select(span):
            lo, hi = span
            return _chunk_topk_candidates(dev_keys[lo:hi], dev_rows[lo:hi], k)

        parts = self._map(select, spans)
        cand_keys = np.concatenate([p[0] for p in parts]) if parts else np.empty(0)
        cand_rows = np.concatenate([p[1] for p in parts]) if parts else np.empty(0, dtype=np.uint32)
        result_rows = _merge_topk_candidates(cand_keys, cand_rows, k)
        t2 = _now()

        returned_rows = result_rows.copy()
        t3 = _now()

        payload = TopKResult(rows=returned_rows, k_requested=k)
        t4 = _now()

        ledger = TransferLedger.build(
            h2d_bytes=entry * n,
            d2h_bytes=ROW_ID_BYTES * len(returned_rows),
            t_h2d=t1 - t0,
            t_kernel=t2 - t1,
            t_d2h=t3 - t2,
            t_post=t4 - t3,
        )
        return DeviceCallResult(payload=payload, ledger=ledger, backend=self.name)

    def probe(
        self,
        build: KeyVector,
        probe: KeyVector,
        mode: str = KEY_ONLY,
        payload_bytes: Optional[int] = None,
    ) -> DeviceCallResult:
        n_total = len(build) + len(probe)
        entry = transfer_entry_bytes(mode, payload_bytes)
        if mode == FULL_ROW:
            dev_build_rows = build.rows.copy()
            dev_probe_rows = probe.rows.copy()
            t0 = _now()
            dev_build_keys = build.keys.copy()
            dev_probe_keys = probe.keys.copy()
            np.empty(n_total * int(payload_bytes), dtype=np.uint8).copy()
            t1 = _now()
        else:
            t0 = _now()
            dev_build_keys = build.keys.copy()
            dev_probe_keys = probe.keys.copy()
            dev_build_rows = build.rows.copy()
            dev_probe_rows = probe.rows.copy()
            t1 = _now()

        table = host_hash_build(KeyVector(keys=dev_build_keys, rows=dev_build_rows))
        bits = key_bits(dev_probe_keys)
        spans = self._chunk_bounds(len(probe), floor=4096)

        def scan(span):
            lo, hi = span
            return _probe_chunk(table, bits[lo:hi], dev_probe_rows[lo:hi])

        parts = self._map(scan, spans)
        probe_rows = np.concatenate([p[0] for p in parts]) if parts else np.empty(0, dtype=np.uint32)
        build_rows = np.concatenate([p[1] for p in parts]) if parts else np.empty(0, dtype=np.uint32)
        t2 = _now()

        returned = (probe_rows.copy(), build_rows.copy())
        t3 = _now()

        payload = ProbeResult(
            probe_rows=returned[0], build_rows=returned[1], probe_count=len(probe)
        )
        t4 = _now()

        ledger = TransferLedger.build(
            h2d_bytes=entry * n_total,
            d2h_bytes=2 * ROW_ID_BYTES * payload.match_count,
            t_h2d=t1 - t0,
            t_kernel=t2 - t1,
            t_d2h=t3 - t2,
            t_post=t4 - t3,
        )
        return DeviceCallResult(payload=payload, ledger=ledger, backend=self.name)


def make_device(backend: str, profile: DeviceProfile = DEFAULT_MODELED_PROFILE,
                workers: Optional[int] = None):
    if backend == "modeled":
        return ModeledDevice(profile)
    if backend == "proxy":
        return ProxyDevice(workers=workers)
    raise ValueError(f"unknown backend {backend!r}")


def device_topk(
    keys: KeyVector,
    k: int,
    profile: DeviceProfile = DEFAULT_MODELED_PROFILE,
    mode: str = KEY_ONLY,
    payload_bytes: Optional[int] = None,
    device=None,
) -> DeviceCallResult:
    dev = device if device is not None else ModeledDevice(profile)
    return dev.topk(keys, k, mode=mode, payload_bytes=payload_bytes)


def device_probe(
    build: KeyVector,
    probe: KeyVector,
    profile: DeviceProfile = DEFAULT_MODELED_PROFILE,
    mode: str = KEY_ONLY,
    payload_bytes: Optional[int] = None,
    device=None,
) -> DeviceCallResult:
    dev = device if device is not None else ModeledDevice(profile)
    return dev.probe(build, probe, mode=mode, payload_bytes=payload_bytes)


def _origin_slope(x: np.ndarray, y: np.ndarray) -> float:
    denom = float(np.dot(x, x))
    if denom == 0.0:
        return 0.0
    return float(np.dot(x, y)) / denom


def _line_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    xbar = float(x.mean())
    ybar = float(y.mean())
    dx = x - xbar
    denom = float(np.dot(dx, dx))
    if denom == 0.0:
        raise CalibrationError("degenerate fit: all sample sizes are equal")
    slope = float(np.dot(dx, y - ybar)) / denom
    return slope, ybar - slope * xbar


def calibrate_profile(
    samples: Sequence[tuple[int, TransferLedger]],
    op: str = OP_TOPK,
    probe_samples: Sequence[tuple[int, TransferLedger]] = (),
) -> DeviceProfile:
    """Fit a DeviceProfile from measured ledgers of one op family.

    samples: (n, ledger) pairs where n is the element count the kernel saw
    (both sides combined for probes). Needs >= 3 distinct n. Bandwidths come
    from through-origin fits of bytes against time, launch and kernel rate
    from an ordinary fit of t_kernel against n, post rate from returned rows
    against t_post. kernel_rate_probe falls back to kernel_rate_topk when no
    probe samples are given (and vice versa).
    """
    if op not in (OP_TOPK, OP_PROBE):
        raise ValueError(f"unknown op {op!r}")
    if len({int(n) for n, _ in samples}) < 3:
        raise CalibrationError("calibration needs at least 3 distinct n values")

    n_arr = np.array([float(n) for n, _ in samples])
    ledgers = [led for _, led in samples]
    h2d_b = np.array([led.h2d_bytes for led in ledgers], dtype=np.float64)
    t_h2d = np.array([led.t_h2d for led in ledgers])
    d2h_b = np.array([led.d2h_bytes for led in ledgers], dtype=np.float64)
    t_d2h = np.array([led.t_d2h for led in ledgers])
    t_kern = np.array([led.t_kernel for led in ledgers])
    t_post = np.array([led.t_post for led in ledgers])

    h2d_slope = _origin_slope(h2d_b, t_h2d)
    if h2d_slope <= 0.0:
        raise CalibrationError("cannot fit h2d bandwidth: no usable transfer samples")
    h2d_bw = 1.0 / h2d_slope

    d2h_slope = _origin_slope(d2h_b, t_d2h)
    d2h_bw = (1.0 / d2h_slope) if d2h_slope > 0.0 else h2d_bw

    rate, launch = _line_fit(n_arr, t_kern)
    rate = max(rate, _TINY_RATE)
    launch = max(launch, _TINY_RATE)

    per_row = 2 * ROW_ID_BYTES if op == OP_PROBE else ROW_ID_BYTES
    rows = d2h_b / per_row
    post_rate = max(_origin_slope(rows, t_post), _TINY_RATE)

    if probe_samples:
        pn = np.array([float(n) for n, _ in probe_samples])
        pk = np.array([led.t_kernel for _, led in probe_samples])
        probe_rate, _ = _line_fit(pn, pk)
        probe_rate = max(probe_rate, _TINY_RATE)
    else:
        probe_rate = rate

    if op == OP_TOPK:
        kernel_rate_topk, kernel_rate_probe = rate, probe_rate
    else:
        kernel_rate_topk, kernel_rate_probe = probe_rate, rate

    return DeviceProfile(
        h2d_bandwidth=h2d_bw,
        d2h_bandwidth=d2h_bw,
        launch_overhead=launch,
        kernel_rate_topk=kernel_rate_topk,
        kernel_rate_probe=kernel_rate_probe,
        post_rate=post_rate,
    )
