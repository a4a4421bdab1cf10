"""Dispatch rule, gated execution, and cpu-model calibration."""

import math

import numpy as np
import pytest

from golp.device import (
    DEFAULT_MODELED_PROFILE,
    FULL_ROW,
    OP_PROBE,
    OP_TOPK,
    DeviceProfile,
    ModeledDevice,
    estimate_device_cost,
)
from golp.errors import CalibrationError
from golp.gate import (
    DEFAULT_CPU_MODEL,
    DEVICE,
    HOST,
    OP_FULL_SORT,
    CpuCostModel,
    GateConfig,
    calibrate_cpu_model,
    decide,
    estimate_cpu_cost,
    execute_gated,
    execute_path,
    with_margin,
)
from golp.store import generate_table

# Flat-cost construction: the host always costs 10 ms, the device ~4 ms, so
# the gain is ~6 ms at every n and the margin alone decides the path.
FLAT_CPU = CpuCostModel(alpha_sort=0.0, beta_sort=10e-3, alpha_match=0.0, beta_match=10e-3)
FLAT_DEVICE = DeviceProfile(
    h2d_bandwidth=1e15,
    d2h_bandwidth=1e15,
    launch_overhead=4e-3,
    kernel_rate_topk=1e-15,
    kernel_rate_probe=1e-15,
    post_rate=1e-15,
)
FLAT_CONFIG = GateConfig(cpu_model=FLAT_CPU, profile=FLAT_DEVICE)


def test_margin_below_gain_offloads():
    d = decide(with_margin(FLAT_CONFIG, 5e-3), OP_TOPK, 1_000, k=100)
    assert d.path == DEVICE
    assert d.c_cpu_est == pytest.approx(10e-3, rel=1e-9)
    assert d.c_gpu_est == pytest.approx(4e-3, rel=1e-6)
    assert d.gain == d.c_cpu_est - d.c_gpu_est


def test_margin_above_gain_stays_on_host():
    d = decide(with_margin(FLAT_CONFIG, 10e-3), OP_TOPK, 1_000, k=100)
    assert d.path == HOST
    assert not d.guard_triggered
    assert d.margin_used == 10e-3


def test_gain_exactly_equal_to_margin_stays_on_host():
    gain = decide(FLAT_CONFIG, OP_TOPK, 1_000, k=100).gain
    assert gain > 0
    d = decide(with_margin(FLAT_CONFIG, gain), OP_TOPK, 1_000, k=100)
    assert d.path == HOST  # dispatch needs gain strictly above the margin


def test_row_count_guard():
    cfg = GateConfig(cpu_model=FLAT_CPU, profile=FLAT_DEVICE, min_n_guard=20_000)
    below = decide(cfg, OP_TOPK, 19_999, k=100)
    assert below.path == HOST
    assert below.guard_triggered
    assert below.gain > 0  # gate would have offloaded without the guard
    at = decide(cfg, OP_TOPK, 20_000, k=100)
    assert at.path == DEVICE
    assert not at.guard_triggered


def test_default_configuration_flips_once_over_the_grid():
    cfg = GateConfig()
    paths = [decide(cfg, OP_TOPK, n, k=100).path for n in
             (1_000, 10_000, 20_000, 100_000, 500_000, 1_000_000, 3_000_000)]
    assert paths == [HOST, HOST, HOST, HOST, DEVICE, DEVICE, DEVICE]


def test_default_gain_values_at_story_sizes():
    cfg = GateConfig()
    expected = {
        100_000: -5.570031e-5,
        500_000: 6.488781e-4,
        1_000_000: 1.614772e-3,
        3_000_000: 5.808935e-3,
    }
    for n, gain in expected.items():
        assert decide(cfg, OP_TOPK, n, k=100).gain == pytest.approx(gain, rel=1e-6)


def test_probe_decision_charges_both_transfer_sides():
    d = decide(FLAT_CONFIG, OP_PROBE, 1_000, k=3, build_n=9_000)
    expect_gpu = estimate_device_cost(OP_PROBE, 10_000, 3, profile=FLAT_DEVICE).total
    assert d.c_gpu_est == expect_gpu
    assert d.c_cpu_est == estimate_cpu_cost(FLAT_CPU, OP_PROBE, 1_000, 3)


def test_cpu_cost_formulas():
    model = CpuCostModel(alpha_sort=2e-9, beta_sort=1e-5, alpha_match=3e-9, beta_match=2e-5)
    n = 4096
    assert estimate_cpu_cost(model, OP_TOPK, n) == 2e-9 * n * 12 + 1e-5
    assert estimate_cpu_cost(model, OP_FULL_SORT, n) == 2e-9 * n * 12 + 1e-5
    assert estimate_cpu_cost(model, OP_PROBE, n, k=10) == 3e-9 * n * 10 + 2e-5
    assert estimate_cpu_cost(model, OP_TOPK, 0) == 1e-5  # log term floored at n=2
    with pytest.raises(ValueError):
        estimate_cpu_cost(model, "scan", n)
    with pytest.raises(ValueError):
        estimate_cpu_cost(model, OP_TOPK, -1)


def test_execute_path_reports_model_latency_on_modeled_backend():
    table = generate_table(2_000, seed=5)
    cfg = GateConfig()
    device = ModeledDevice(cfg.profile)
    _, host_latency = execute_path(table, OP_TOPK, 100, cfg, device, HOST)
    assert host_latency == estimate_cpu_cost(cfg.cpu_model, OP_TOPK, 2_000, 100)
    _, dev_latency = execute_path(table, OP_TOPK, 100, cfg, device, DEVICE)
    assert dev_latency == estimate_device_cost(OP_TOPK, 2_000, 100, profile=cfg.profile).total


def test_both_paths_materialize_identical_rows():
    table = generate_table(5_000, seed=8)
    cfg = GateConfig()
    device = ModeledDevice(cfg.profile)
    host_res, _ = execute_path(table, OP_TOPK, 64, cfg, device, HOST)
    dev_res, _ = execute_path(table, OP_TOPK, 64, cfg, device, DEVICE)
    assert np.array_equal(host_res.row_ids, dev_res.row_ids)
    assert np.array_equal(host_res.keys, dev_res.keys)
    assert np.array_equal(host_res.payloads, dev_res.payloads)


def test_execute_gated_agrees_with_decide():
    table = generate_table(3_000_000 // 100, seed=1)  # 30k rows: host regime
    cfg = GateConfig()
    result, decision, observed = execute_gated(table, OP_TOPK, 100, cfg)
    assert decision == decide(cfg, OP_TOPK, table.row_count, 100, table.payload_bytes)
    assert decision.path == HOST
    assert observed == decision.c_cpu_est
    assert len(result.row_ids) == 100


def test_execute_gated_device_latency_is_the_ledger_total():
    table = generate_table(500_000, seed=2)
    cfg = GateConfig()
    _, decision, observed = execute_gated(table, OP_TOPK, 100, cfg)
    assert decision.path == DEVICE
    assert observed == decision.c_gpu_est


def test_execute_gated_probe_uses_build_count():
    build = generate_table(2_000, seed=3)
    probe = generate_table(1_000, seed=4)
    cfg = GateConfig(cpu_model=FLAT_CPU, profile=FLAT_DEVICE)
    result, decision, _ = execute_gated((build, probe), OP_PROBE, 1, cfg)
    expect = decide(cfg, OP_PROBE, 1_000, 1, probe.payload_bytes, build_n=2_000)
    assert decision == expect
    assert result.probe_count == 1_000


def test_gate_config_validation():
    with pytest.raises(ValueError):
        GateConfig(margin_s=-1e-3)
    with pytest.raises(ValueError):
        GateConfig(min_n_guard=-1)
    with pytest.raises(ValueError):
        GateConfig(mode="compressed")
    with pytest.raises(ValueError):
        CpuCostModel(alpha_sort=-1e-9, beta_sort=0, alpha_match=0, beta_match=0)


def test_gate_config_json_round_trip():
    cfg = GateConfig(
        margin_s=2.5e-3,
        min_n_guard=1_234,
        cpu_model=CpuCostModel(1e-10, 2e-6, 3e-10, 4e-6),
        profile=FLAT_DEVICE,
        mode=FULL_ROW,
    )
    assert GateConfig.from_json_dict(cfg.to_json_dict()) == cfg
    assert GateConfig.from_json_dict({}) == GateConfig()
    got = GateConfig.from_json_dict({"margin_s": 7e-3, "min_n_guard": None})
    assert got.margin_s == 7e-3
    assert got.min_n_guard is None
    assert got.profile == DEFAULT_MODELED_PROFILE


def test_with_margin_leaves_original_untouched():
    base = GateConfig()
    tweaked = with_margin(base, 42e-3)
    assert base.margin_s == 0.0
    assert tweaked.margin_s == 42e-3
    assert tweaked.cpu_model is base.cpu_model


def test_calibrate_cpu_model_recovers_exact_constants():
    truth = CpuCostModel(alpha_sort=2e-10, beta_sort=3e-6, alpha_match=4e-10, beta_match=2e-6)
    samples = []
    for n in (10_000, 100_000, 1_000_000):
        samples.append((OP_FULL_SORT, n, 1, estimate_cpu_cost(truth, OP_FULL_SORT, n)))
        samples.append((OP_PROBE, n, 7, estimate_cpu_cost(truth, OP_PROBE, n, 7)))
    fitted = calibrate_cpu_model(samples)
    assert fitted.alpha_sort == pytest.approx(truth.alpha_sort, rel=1e-9)
    assert fitted.beta_sort == pytest.approx(truth.beta_sort, rel=1e-9)
    assert fitted.alpha_match == pytest.approx(truth.alpha_match, rel=1e-9)
    assert fitted.beta_match == pytest.approx(truth.beta_match, rel=1e-9)


def test_calibrate_cpu_model_sort_family_alone():
    samples = [(OP_TOPK, n, 100, 1e-10 * n * math.log2(n) + 1e-6)
               for n in (1_000, 10_000, 100_000)]
    fitted = calibrate_cpu_model(samples)
    assert fitted.alpha_sort == pytest.approx(1e-10, rel=1e-9)
    assert fitted.alpha_match == 0.0
    assert fitted.beta_match == 0.0


def test_calibrate_cpu_model_input_validation():
    with pytest.raises(CalibrationError):
        calibrate_cpu_model([])
    with pytest.raises(CalibrationError):  # only 2 distinct n in the family
        calibrate_cpu_model([(OP_FULL_SORT, 10, 1, 1e-3), (OP_FULL_SORT, 20, 1, 2e-3)])
    with pytest.raises(CalibrationError):  # flat measurements: nothing grows
        calibrate_cpu_model([(OP_FULL_SORT, n, 1, 5e-3) for n in (10, 20, 40)])
    with pytest.raises(ValueError):
        calibrate_cpu_model([("scan", 10, 1, 1e-3)])


def test_calibrate_cpu_model_clamps_negative_slope_to_zero():
    # decreasing sort timings (noise artifact) clamp to a flat sort model;
    # the growing match family keeps the calibration as a whole valid
    samples = [(OP_FULL_SORT, n, 1, t) for n, t in ((10, 3e-3), (100, 2e-3), (1_000, 1e-3))]
    samples += [(OP_PROBE, n, 1, 1e-9 * n + 1e-6) for n in (10, 100, 1_000)]
    fitted = calibrate_cpu_model(samples)
    assert fitted.alpha_sort == 0.0
    assert fitted.beta_sort == pytest.approx(2e-3, rel=1e-9)  # mean of the flat fit
    assert fitted.alpha_match == pytest.approx(1e-9, rel=1e-9)
