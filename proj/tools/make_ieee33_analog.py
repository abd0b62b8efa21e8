#!/usr/bin/env python3
"""Writes the shipped scenario directories under scenarios/.

The 33-bus cases use the Baran-Wu feeder impedances and loads on a 12.66 kV,
1 MVA base. Line admittances follow u = r / (r^2 + x^2), w = -x / (r^2 + x^2)
in per unit. Consumer costs are drawn from a fixed seed, so rerunning the
script reproduces the committed files byte for byte.

    python3 tools/make_ieee33_analog.py [OUTPUT_DIR]
"""

import csv
import json
import random
import sys
from pathlib import Path

KV, MVA = 12.66, 1.0
Z_BASE = KV * KV / MVA

# (from, to, r ohm, x ohm); load (P kW, Q kvar) sits at the receiving bus.
BRANCHES = [
    (1, 2, 0.0922, 0.0470, 100, 60), (2, 3, 0.4930, 0.2511, 90, 40), (3, 4, 0.3660, 0.1864, 120, 80),
    (4, 5, 0.3811, 0.1941, 60, 30), (5, 6, 0.8190, 0.7070, 60, 20), (6, 7, 0.1872, 0.6188, 200, 100),
    (7, 8, 0.7114, 0.2351, 200, 100), (8, 9, 1.0300, 0.7400, 60, 20), (9, 10, 1.0440, 0.7400, 60, 20),
    (10, 11, 0.1966, 0.0650, 45, 30), (11, 12, 0.3744, 0.1238, 60, 35), (12, 13, 1.4680, 1.1550, 60, 35),
    (13, 14, 0.5416, 0.7129, 120, 80), (14, 15, 0.5910, 0.5260, 60, 10), (15, 16, 0.7463, 0.5450, 60, 20),
    (16, 17, 1.2890, 1.7210, 60, 20), (17, 18, 0.7320, 0.5740, 90, 40), (2, 19, 0.1640, 0.1565, 90, 40),
    (19, 20, 1.5042, 1.3554, 90, 40), (20, 21, 0.4095, 0.4784, 90, 40), (21, 22, 0.7089, 0.9373, 90, 40),
    (3, 23, 0.4512, 0.3083, 90, 50), (23, 24, 0.8980, 0.7091, 420, 200), (24, 25, 0.8960, 0.7011, 420, 200),
    (6, 26, 0.2030, 0.1034, 60, 25), (26, 27, 0.2842, 0.1447, 60, 25), (27, 28, 1.0590, 0.9337, 60, 20),
    (28, 29, 0.8042, 0.7006, 120, 70), (29, 30, 0.5075, 0.2585, 200, 600), (30, 31, 0.9744, 0.9630, 150, 70),
    (31, 32, 0.3105, 0.3619, 210, 100), (32, 33, 0.3410, 0.5302, 60, 40),
]


def fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def admittance(r, x):
    r, x = r / Z_BASE, x / Z_BASE
    den = r * r + x * x
    return r / den, -x / den


def draw_costs(rng):
    return round(rng.uniform(0.003, 0.005), 6), round(rng.uniform(0.35, 0.45), 6)


def feeder33(out, scenario, load_scale, vmin, vmax, capacity, players, seed):
    """players: {bus: (x_hat, cost override or None)}."""
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    load = {t: (p * load_scale, q * load_scale) for _, t, _, _, p, q in BRANCHES}
    # The slack row's ranges are ignored: its voltage is 1 pu, its angle 0.
    buses = [(1, vmin, vmax, -0.5, 0.5, 0.0)]
    for b in range(2, 34):
        # Reactive loads are fixed injections in per unit.
        buses.append((b, vmin, vmax, -0.5, 0.5, round(-load[b][1] / 1000.0, 9)))
    lines = []
    for f, t, r, x, _, _ in BRANCHES:
        u, w = admittance(r, x)
        lines.append((f, t, round(u, 6), round(w, 6), capacity(f, t)))
    consumers = []
    for b in range(2, 34):
        d = round(load[b][0], 6)
        if b in players:
            x_hat, cost = players[b]
            a, b_lin = cost if cost else draw_costs(rng)
            consumers.append((b - 1, b, 1, a, b_lin, x_hat, d))
        else:
            consumers.append((b - 1, b, 0, 0.0, 0.0, 0.0, d))
    write_csv(out / "buses.csv", ["id", "vmin", "vmax", "theta_min", "theta_max", "q_injection"], buses)
    write_csv(out / "lines.csv", ["from", "to", "u", "w", "z"], lines)
    write_csv(out / "consumers.csv", ["id", "bus", "active", "a", "b_lin", "x_hat", "d"], consumers)
    with open(out / "scenario.json", "w") as f:
        json.dump(scenario, f, indent=2)
        f.write("\n")


def two_bus(out):
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "buses.csv", ["id", "vmin", "vmax", "theta_min", "theta_max", "q_injection"],
              [(1, 0.9, 1.1, -0.5, 0.5, 0.0), (2, 0.9, 1.1, -0.5, 0.5, 0.0)])
    write_csv(out / "lines.csv", ["from", "to", "u", "w", "z"], [(1, 2, 20.0, -40.0, 1.0)])
    write_csv(out / "consumers.csv", ["id", "bus", "active", "a", "b_lin", "x_hat", "d"],
              [(1, 2, 1, 0.004, 0.4, 100.0, 50.0), (2, 2, 1, 0.004, 0.4, 100.0, 50.0)])
    with open(out / "scenario.json", "w") as f:
        json.dump({"description": "Two identical consumers behind one line.", "x_tot": 60.0,
                   "direction": "deficit", "delta": 0.5, "stop_tol": 1e-14, "max_iter": 100000,
                   "seed": 1}, f, indent=2)
        f.write("\n")


def main():
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "scenarios"
    ample = lambda f, t: 5.0

    analog_players = {b: (60.0, None) for b in (5, 8, 11, 14, 17, 20, 22, 24, 26, 29, 31, 33)}
    feeder33(root / "ieee33-analog",
             {"description": "33-bus analog, twelve flexible consumers covering a deficit.",
              "x_tot": 300.0, "direction": "deficit", "delta": 0.5, "stop_tol": 1e-14,
              "max_iter": 100000, "seed": 7,
              "sweep": {"n_values": [5, 10, 20, 40], "delta_values": [0.25, 0.5, 0.75]}},
             1.0, 0.9, 1.1, ample, analog_players, seed=7)

    # Cheap flexibility at the end of the long main feeder; absorbing the
    # surplus there drags the tail voltage under 0.95 unless the DSO steps in.
    surplus_players = {
        17: (400.0, (0.003, 0.30)), 18: (400.0, (0.003, 0.30)), 16: (400.0, (0.003, 0.32)),
        2: (400.0, (0.004, 0.44)), 3: (400.0, (0.004, 0.45)), 19: (400.0, (0.004, 0.44)),
        23: (400.0, (0.005, 0.43)),
    }
    feeder33(root / "ieee33-security" / "surplus",
             {"description": "Surplus absorbed on a weak feeder; voltage floor binds.",
              "x_tot": 600.0, "direction": "surplus", "delta": 0.5, "stop_tol": 1e-14,
              "max_iter": 100000, "seed": 11},
             0.5, 0.95, 1.05, ample, surplus_players, seed=11)

    # Cheap injection at the end of the 32 - 33 lateral reverses its flow past
    # the rating.
    tight = lambda f, t: 0.12 if (f, t) == (32, 33) else 5.0
    deficit_players = {
        33: (400.0, (0.003, 0.30)), 24: (300.0, (0.004, 0.40)),
        2: (600.0, (0.004, 0.42)), 4: (600.0, (0.004, 0.43)), 19: (600.0, (0.005, 0.42)),
        7: (600.0, (0.004, 0.44)),
    }
    feeder33(root / "ieee33-security" / "deficit",
             {"description": "Deficit covered by injection behind a tight line.",
              "x_tot": 1200.0, "direction": "deficit", "delta": 0.5, "stop_tol": 1e-14,
              "max_iter": 100000, "seed": 13},
             1.0, 0.9, 1.1, tight, deficit_players, seed=13)

    two_bus(root / "two-bus")


if __name__ == "__main__":
    main()
