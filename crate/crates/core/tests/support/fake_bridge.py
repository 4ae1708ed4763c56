#!/usr/bin/env python3
"""Stand-in bridge: answers the JSON-lines protocol without a GPU.

Compute kernels report 4 cycles per instruction plus a 2-cycle overhead;
dynamic shared allocations above SHARED_LIMIT fail. FAKE_BRIDGE_MODE=garbage
answers launches with a non-JSON line, FAKE_BRIDGE_MODE=exit quits instead.
"""

import json
import os
import sys

SHARED_LIMIT = 101376
DEVICE = {
    "name": "Fake Device",
    "chip": "FAKE1",
    "sm_count": 4,
    "clock_mhz": 1000,
    "l1_kb": 128,
    "l2_mb": 4,
    "global_gb": 1,
    "memory_kind": "none",
}
COMPUTE = {"PureInt32Mad", "PureFp32Fma", "PureFp64Fma", "MmaSync"}


def launch(req):
    if req.get("dynamic_shared_bytes", 0) > SHARED_LIMIT:
        return {"id": req["id"], "error": "CUDA_ERROR_INVALID_VALUE"}
    with open(os.path.splitext(req["ptx_path"])[0] + ".json") as f:
        spec = json.load(f)["spec"]
    work = spec.get("workload", "")
    if work == "ClockOverhead":
        c = 2
    elif work in COMPUTE or work.startswith("MixedIntFp32"):
        n = spec.get("chain_len", 1) * spec.get("ilp", 1) * spec.get("iterations", 1)
        c = 2 + 4 * n
    else:
        c = 2 + 100 * max(spec.get("accesses", 1), 1)
    slots = req["result"]["cycle_slots"]
    reps = req["reps"]
    return {"id": req["id"], "cycles": [c] * (slots * reps), "wall_time_ns": 1000 * reps, "checksum": "feed"}


def main():
    mode = os.environ.get("FAKE_BRIDGE_MODE", "")
    for line in sys.stdin:
        req = json.loads(line)
        if req["op"] == "device_info":
            out = {"id": req["id"], "device": DEVICE}
        elif mode == "garbage":
            print("not json", flush=True)
            continue
        elif mode == "exit":
            return
        else:
            out = launch(req)
        print(json.dumps(out), flush=True)


if __name__ == "__main__":
    main()
