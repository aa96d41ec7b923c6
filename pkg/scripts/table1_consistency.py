#!/usr/bin/env python3
"""Check which class-count denominator reproduces the published mAP column.

Each row lists the four shown class APs (car, bus, person, motorcycle) and the
printed mAP, all in integer percent. Truck and bicycle columns are not shown,
so a 6-class mean assumes they were 0.

    python scripts/table1_consistency.py
"""

from restorex.detection_eval import display_percent, mean_ap

SHOWN = ("car", "bus", "person", "motorcycle")
SIX = ("car", "bus", "truck", "motorcycle", "person", "bicycle")

ROWS = {
    "Gray Restormer / Noise 15": ((1, 5, 22, 0), 6),
    "Gray Restormer / Noise 25": ((1, 9, 23, 0), 6),
    "Gray Restormer / Noise 50": ((1, 0, 29, 0), 6),
    "Color Restormer / Noise 15": ((1, 3, 21, 0), 5),
    "Color Restormer / Noise 25": ((1, 5, 22, 0), 6),
    "Color Restormer / Noise 50": ((1, 11, 24, 0), 7),
    "Weather-RainGAN / Stage 1": ((1, 0, 0, 0), 0),
    "Weather-RainGAN / Stage 2": ((1, 17, 0, 0), 4),
    "Weather-RainGAN / Stage 3": ((1, 0, 0, 0), 0),
    "Weather-RainGAN / Stage 4": ((1, 0, 0, 76), 15),
    "Weather-RainGAN / Stage 5": ((1, 0, 0, 0), 0),
    "Weather-NightGAN / Stage 1": ((11, 0, 0, 0), 2),
    "Weather-NightGAN / Stage 2": ((1, 0, 0, 0), 0),
    "Weather-NightGAN / Stage 3": ((1, 0, 0, 0), 0),
    "Weather-NightGAN / Stage 4": ((17, 0, 0, 0), 3),
    "Weather-NightGAN / Stage 5": ((48, 0, 0, 0), 10),
}


def main() -> None:
    print(f"{'row':<30} {'printed':>7} {'4-class':>8} {'6-class':>8}")
    hits = {4: 0, 6: 0}
    for name, (aps, printed) in ROWS.items():
        values = {c: a / 100 for c, a in zip(SHOWN, aps)}
        four = display_percent(mean_ap(SHOWN, values))
        six = display_percent(mean_ap(SIX, values))
        hits[4] += four == printed
        hits[6] += six == printed
        print(f"{name:<30} {printed:>7} {four:>8} {six:>8}")
    print(f"\nrows matched: 4-class {hits[4]}/{len(ROWS)}, 6-class {hits[6]}/{len(ROWS)}")


if __name__ == "__main__":
    main()
