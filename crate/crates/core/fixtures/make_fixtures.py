#!/usr/bin/env python3
"""Regenerate the replay fixtures gb203.json and gh100.json.

Power traces are built so the trapezoid average over the run window equals the
target draw: the window holds 21 equal intervals, both ends sit at the target,
and the 20 interior samples alternate +/- a fixed ripple. Sample times are
multiples of 1/16 s so they are exact in binary floating point.
"""

import json
import os
import re

SHAPE = [(1, 2.5), (2, 1.75), (4, 1.3), (8, 1.08), (9, 1.06), (16, 1.03), (64, 1.0), (1024, 1.0)]
PERIOD = 0.0625
WINDOW_START = 10.0
INTERVALS = 21
RIPPLE = 1.5


def true_cpi(at_1024, override=None):
    if override is not None:
        return [[float(x), y] for x, y in override]
    return [[float(x), round(at_1024 * m, 6)] for x, m in SHAPE]


def compute(workload, true_1024, completion, override=None):
    return {
        "workload": workload,
        "true_cpi": true_cpi(true_1024, override),
        "completion_cpi": completion,
        "noise": 0.002,
    }


def power_trace(label, watts, idle):
    t0 = WINDOW_START
    t1 = t0 + INTERVALS * PERIOD
    samples = [[t0 - 2 * PERIOD, idle], [t0 - PERIOD, idle]]
    for k in range(INTERVALS + 1):
        w = watts
        if 0 < k < INTERVALS:
            w = watts + (RIPPLE if k % 2 else -RIPPLE)
        samples.append([t0 + k * PERIOD, w])
    samples += [[t1 + PERIOD, idle], [t1 + 2 * PERIOD, idle]]
    return {"label": label, "interval_s": PERIOD, "window": [t0, t1], "samples": samples}


def knots(pairs):
    return [[float(x), float(y)] for x, y in pairs]


GB203 = {
    "fixture_version": 1,
    "device": {
        "name": "GeForce RTX 5080",
        "chip": "GB203",
        "sm_count": 84,
        "clock_mhz": 2617,
        "l1_kb": 128,
        "l2_mb": 65,
        "global_gb": 16,
        "memory_kind": "GDDR7",
    },
    "clock_overhead_cycles": 1,
    "shared_limit_bytes": 101376,
    "bandwidth": {"read_bytes_per_s": 8.2e12, "write_bytes_per_s": 1.6e12},
    "first_run_penalty": 1.5,
    "generators": {
        "compute": [
            compute("PureInt32Mad", 4.0, 16.97),
            compute("PureFp32Fma", 4.0, 7.97),
            compute("MixedIntFp32:Mixed1", 15.96, 14.0),
            compute("MixedIntFp32:Mixed2", 26.28, 18.0),
            compute(
                "PureFp64Fma",
                63.57,
                11.0,
                [(1, 40), (2, 37.5), (4, 36.5), (8, 36), (9, 36), (16, 40), (64, 52), (256, 60), (1024, 63.57)],
            ),
        ],
        "mma": {"issue_cycles": 1.2109375, "max_ilp": 6, "peak_warp_slots": 134.0, "noise": 0.0},
        "pointer_chase": {
            "levels": [
                {"upper_bytes": 128 * 1024, "cycles": 35.0},
                {"upper_bytes": 71 * 1024 * 1024, "cycles": 358.0},
                {"upper_bytes": None, "cycles": 876.7},
            ],
            "noise": 0.01,
        },
        "strided": [
            {"workload": "SharedMemStride", "stride": 1,
             "per_access_cycles": knots([(1, 28), (4, 30), (8, 40), (16, 62), (32, 110)]), "noise": 0.0},
            {"workload": "SharedMemStride", "stride": 4,
             "per_access_cycles": knots([(1, 36), (4, 44), (8, 70), (16, 130), (32, 250)]), "noise": 0.0},
            {"workload": "L1Stride", "stride": 1,
             "per_access_cycles": knots([(1, 60), (4, 62), (8, 68), (16, 82), (32, 110)]), "noise": 0.0},
            {"workload": "L1Stride", "stride": 4,
             "per_access_cycles": knots([(1, 70), (8, 100), (16, 150), (32, 250)]), "noise": 0.0},
        ],
        "l2": {
            "per_warp_cycles": knots([(1, 49000), (4, 49400), (8, 56000), (12, 61000), (16, 66000),
                                      (20, 77500), (24, 95000), (28, 112000), (32, 128400)]),
            "reference_accesses": 1024,
            "noise": 0.002,
        },
    },
    "power_traces": [
        power_trace("mma:e2m1", 16.753, 10.0),
        power_trace("mma:e2m3", 39.383, 10.0),
        power_trace("mma:e3m2", 46.723, 10.0),
        power_trace("mma:e4m3", 46.661, 10.0),
        power_trace("mma:e5m2", 46.806, 10.0),
        power_trace("gemm:8192x8192x8192", 114.4, 10.0),
    ],
}

GH100 = {
    "fixture_version": 1,
    "device": {
        "name": "H100 PCIe",
        "chip": "GH100",
        "sm_count": 114,
        "clock_mhz": 1755,
        "l1_kb": 256,
        "l2_mb": 50,
        "global_gb": 80,
        "memory_kind": "HBM2e",
    },
    "clock_overhead_cycles": 2,
    "shared_limit_bytes": 232448,
    "bandwidth": {"read_bytes_per_s": 15.8e12, "write_bytes_per_s": 2.2e12},
    "first_run_penalty": 1.0,
    "generators": {
        "compute": [
            compute("PureInt32Mad", 4.0, 16.69),
            compute("PureFp32Fma", 4.0, 7.86),
            compute("MixedIntFp32:Mixed1", 31.62, 16.0),
            compute("MixedIntFp32:Mixed2", 43.54, 20.0),
            compute("PureFp64Fma", 8.04, 13.0),
        ],
        "mma": {"issue_cycles": 1.65625, "max_ilp": 5, "peak_warp_slots": 124.0, "noise": 0.0},
        "pointer_chase": {
            "levels": [
                {"upper_bytes": 256 * 1024, "cycles": 35.0},
                {"upper_bytes": 31 * 1024 * 1024, "cycles": 273.0},
                {"upper_bytes": 55 * 1024 * 1024, "cycles": 508.0},
                {"upper_bytes": None, "cycles": 658.7},
            ],
            "noise": 0.01,
        },
        "strided": [
            {"workload": "SharedMemStride", "stride": 1,
             "per_access_cycles": knots([(1, 31), (4, 33), (8, 36), (16, 55), (32, 100)]), "noise": 0.0},
            {"workload": "SharedMemStride", "stride": 4,
             "per_access_cycles": knots([(1, 40), (4, 46), (8, 62), (16, 105), (32, 200)]), "noise": 0.0},
            {"workload": "L1Stride", "stride": 1,
             "per_access_cycles": knots([(1, 64), (4, 66), (8, 70), (16, 80), (32, 100)]), "noise": 0.0},
            {"workload": "L1Stride", "stride": 4,
             "per_access_cycles": knots([(1, 72), (8, 90), (16, 130), (32, 200)]), "noise": 0.0},
        ],
        "l2": {
            "per_warp_cycles": knots([(1, 43500), (4, 43600), (8, 45000), (12, 48000), (16, 54000),
                                      (20, 78000), (24, 96000), (28, 113000), (32, 128900)]),
            "reference_accesses": 1024,
            "noise": 0.002,
        },
    },
    "power_traces": [
        power_trace("mma:e4m3", 55.823, 12.0),
        power_trace("mma:e5m2", 55.786, 12.0),
        power_trace("gemm:8192x8192x8192", 68.0, 12.0),
    ],
}


def main():
    here = os.path.dirname(os.path.abspath(__file__))
    for name, data in (("gb203.json", GB203), ("gh100.json", GH100)):
        with open(os.path.join(here, name), "w") as f:
            text = json.dumps(data, indent=1)
            text = re.sub(r"\[\s*([-0-9.e]+),\s*([-0-9.e]+)\s*\]", r"[\1, \2]", text)
            f.write(text + "\n")


if __name__ == "__main__":
    main()
