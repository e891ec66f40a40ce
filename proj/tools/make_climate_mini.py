#!/usr/bin/env python3
"""Writes data/climate_mini.csv: temperatures at 48 grid locations, four times of day, 60 days.

Long format: one row per (mode, day); node columns hold the readings. Regional weather
factors make nearby locations correlated; each time of day has its own
offset and spatial spread.
"""
import csv
import math
import random
import sys
from pathlib import Path

ROWS, COLS, DAYS = 6, 8, 60
MODES = ["early_morning", "late_morning", "afternoon", "night"]
HOURS = {"early_morning": 6, "late_morning": 10, "afternoon": 15, "night": 22}
SPREAD = {"early_morning": 4.0, "late_morning": 6.0, "afternoon": 9.0, "night": 3.0}


def main(out_path: Path, seed: int = 7) -> None:
    rng = random.Random(seed)
    nodes = [(r, c) for r in range(ROWS) for c in range(COLS)]
    names = [f"loc{i:02d}" for i in range(len(nodes))]
    centres = [(rng.uniform(0, ROWS), rng.uniform(0, COLS)) for _ in range(5)]

    def weight(node, centre, spread):
        d2 = (node[0] - centre[0]) ** 2 + (node[1] - centre[1]) ** 2
        return math.exp(-d2 / spread)

    with out_path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["mode", "day", *names])
        for mode in MODES:
            hour = HOURS[mode]
            diurnal = 8.0 * math.sin(math.pi * (hour - 6) / 14.0) if 6 <= hour <= 20 else -4.0
            for day in range(DAYS):
                day_rng = random.Random(seed * 1000 + day)
                factors = [day_rng.gauss(0, 3) for _ in centres]
                season = 5.0 * math.sin(2 * math.pi * day / 365.0)
                row = []
                for node in nodes:
                    base = 20.0 - 1.5 * node[0]
                    weather = sum(fk * weight(node, ck, SPREAD[mode]) for fk, ck in zip(factors, centres))
                    value = base + season + diurnal + weather + rng.gauss(0, 0.5)
                    row.append(f"{value:.3f}")
                w.writerow([mode, f"{day:03d}", *row])


if __name__ == "__main__":
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data" / "climate_mini.csv"
    main(target)
