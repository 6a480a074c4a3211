#!/usr/bin/env python3
"""Regenerate data/reference_grid.json and data/reference_scenario.json.

The feeder is a 25 node-phase radial line with one tap-changing transformer:

    src - 1 - 2 - 3 =tf= 4 - 5 - 6 - 7      (three-phase)
              |              |   |   |
              8a             9b  10c 11a    (single-phase laterals)

Profiles are synthetic: a two-peak residential load shape, a solar bell and
a gusty wind trace from low-pass filtered noise.
"""

import json
import math
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
BASE_KV = 4.16
BASE_MVA = 1.0
Z_BASE = BASE_KV**2 / BASE_MVA
HORIZON = 96

# Per-phase series impedance of one unit-length segment, p.u.
Z_SELF = complex(0.020, 0.018)
Z_MUTUAL = complex(0.006, 0.007)


def y_block(phases, length):
    n = len(phases)
    z = np.full((n, n), Z_MUTUAL, dtype=complex)
    np.fill_diagonal(z, Z_SELF)
    y_pu = np.linalg.inv(z * length)
    y_si = y_pu / Z_BASE
    return [[[float(v.real), float(v.imag)] for v in row] for row in y_si]


def branch(a, b, phases, length):
    return {"from": a, "to": b, "y_block": y_block(phases, length)}


def grid():
    abc = ["a", "b", "c"]
    buses = [{"id": str(k), "phases": abc} for k in ["src", 1, 2, 3, 4, 5, 6, 7]]
    buses[0]["id"] = "src"
    laterals = [("8", "a", "2"), ("9", "b", "5"), ("10", "c", "6"), ("11", "a", "7")]
    buses += [{"id": b, "phases": [p]} for b, p, _ in laterals]
    branches = [
        branch("src", "1", abc, 1.0),
        branch("1", "2", abc, 1.5),
        branch("2", "3", abc, 1.0),
        branch("3", "4", abc, 0.1),
        branch("4", "5", abc, 1.0),
        branch("5", "6", abc, 1.5),
        branch("6", "7", abc, 1.5),
    ]
    branches += [branch(parent, b, [p], 1.0) for b, p, parent in laterals]
    ang = [0.0, -2.0 * math.pi / 3.0, 2.0 * math.pi / 3.0]
    return {
        "base_mva": BASE_MVA,
        "base_kv": BASE_KV,
        "buses": buses,
        "branches": branches,
        "source": {"bus": "src", "v": [[math.cos(t), math.sin(t)] for t in ang]},
        "transformer": {"primary": "3", "secondary": "4", "tap_min": 0.9, "tap_max": 1.1, "tap_step": 0.00125},
    }


def hours():
    return np.arange(HORIZON) * 24.0 / HORIZON


def residential():
    h = hours()
    shape = 0.35 + 0.35 * np.exp(-((h - 8.0) ** 2) / 4.0) + 0.65 * np.exp(-((h - 19.5) ** 2) / 6.0)
    return shape / shape.max()


def commercial():
    h = hours()
    shape = 0.3 + 0.7 / (1.0 + np.exp(-(h - 8.0) * 2.0)) / (1.0 + np.exp((h - 18.0) * 2.0))
    return shape / shape.max()


def solar():
    h = hours()
    shape = np.clip(np.sin(math.pi * (h - 6.0) / 13.0), 0.0, None) ** 1.5
    cloud = 1.0 - 0.25 * np.exp(-((h - 14.0) ** 2) / 0.5)
    return shape * cloud


def wind(rng):
    raw = rng.normal(size=HORIZON + 24)
    kernel = np.exp(-np.arange(12) / 4.0)
    smooth = np.convolve(raw, kernel / kernel.sum(), mode="valid")[:HORIZON]
    level = 0.55 + 0.35 * np.sin(2.0 * math.pi * (hours() - 3.0) / 24.0)
    return np.clip(level + 0.5 * smooth, 0.0, 1.0)


def scenario():
    rng = np.random.default_rng(20170715)
    profiles = {
        "residential": residential(),
        "commercial": commercial(),
        "solar": solar(),
        "wind": wind(rng),
    }
    abc = ["a", "b", "c"]
    loads = [
        {"bus": "1", "phases": abc, "p": 0.030, "q": 0.010, "profile": "commercial"},
        {"bus": "2", "phases": abc, "p": 0.040, "q": 0.013, "profile": "residential"},
        {"bus": "8", "phases": ["a"], "p": 0.030, "q": 0.010, "profile": "residential"},
        {"bus": "5", "phases": abc, "p": 0.035, "q": 0.012, "profile": "residential"},
        {"bus": "6", "phases": abc, "p": 0.030, "q": 0.010, "profile": "commercial"},
        {"bus": "7", "phases": abc, "p": 0.040, "q": 0.013, "profile": "residential"},
        {"bus": "9", "phases": ["b"], "p": 0.025, "q": 0.008, "profile": "residential"},
        {"bus": "10", "phases": ["c"], "p": 0.025, "q": 0.008, "profile": "commercial"},
        {"bus": "11", "phases": ["a"], "p": 0.030, "q": 0.010, "profile": "residential"},
    ]
    generators = [
        {"bus": "2", "phases": abc, "s_max": 0.45, "profile": "wind"},
        {"bus": "5", "phases": abc, "s_max": 0.35, "profile": "wind"},
        {"bus": "6", "phases": abc, "s_max": 0.30, "profile": "solar"},
        {"bus": "7", "phases": abc, "s_max": 0.35, "profile": "solar"},
    ]
    for g in generators:
        g["p_min"] = 0.0
        g["q_max_frac"] = 0.44
    measurements = [
        {"kind": "voltage_phasor", "bus": "7", "phases": abc},
        {"kind": "voltage_magnitude", "bus": "5", "phases": abc},
        {"kind": "node_current_phasor", "bus": "6", "phases": abc},
        {"kind": "node_current_magnitude", "bus": "2", "phases": abc},
        {"kind": "branch_current_phasor", "branch": ["4", "5"], "phases": abc},
    ]
    return {
        "grid": "reference_grid.json",
        "horizon": HORIZON,
        "step_minutes": 15.0,
        "seed": 42,
        "beta": 0.95,
        "v_min": 0.95,
        "v_max": 1.05,
        "case": "with-cov",
        "initial_tap": [1.0, 1.0, 1.0],
        "free_source_voltage": False,
        "reactive_weight": 1.0,
        "profiles": {k: [round(float(x), 6) for x in v] for k, v in profiles.items()},
        "loads": loads,
        "generators": generators,
        "measurements": measurements,
        "pseudo_sigma_frac": 0.5,
        "pseudo_noise": "gaussian",
    }


def main():
    data = ROOT / "data"
    data.mkdir(exist_ok=True)
    (data / "reference_grid.json").write_text(json.dumps(grid(), indent=1) + "\n")
    (data / "reference_scenario.json").write_text(json.dumps(scenario(), indent=1) + "\n")


if __name__ == "__main__":
    main()
