"""Regenerate the bundled BTC-USD daily fixture and its manifest.

The fixture is a deterministic synthetic stand-in shaped like a Yahoo
Finance BTC-USD export: one row per calendar day from 2015-12-31 through
2023-04-06 (2654 rows, no gaps), six features, USD prices.  Closes follow
the real Bitcoin trajectory through a set of log-price anchors with
seeded mean-reverting noise on top; open is the previous close, high/low
bracket them, adjusted close equals close (no splits/dividends), and
volume scales with price.  Run from the repo root:

    python tools/make_fixture.py
"""

from __future__ import annotations

import hashlib
import json
import math
from datetime import date, timedelta
from pathlib import Path

from rnncast.linalg import Rng

START = date(2015, 12, 31)
END = date(2023, 4, 6)
SEED = 20230406

# (date, close USD): the broad strokes of the 2016-2023 price path.
ANCHORS = [
    (date(2015, 12, 31), 430.0),
    (date(2016, 6, 30), 670.0),
    (date(2016, 12, 31), 963.0),
    (date(2017, 3, 31), 1080.0),
    (date(2017, 6, 30), 2480.0),
    (date(2017, 9, 30), 4340.0),
    (date(2017, 12, 16), 19500.0),
    (date(2018, 2, 5), 6950.0),
    (date(2018, 3, 31), 6920.0),
    (date(2018, 7, 31), 7750.0),
    (date(2018, 11, 10), 6400.0),
    (date(2018, 12, 15), 3230.0),
    (date(2019, 3, 31), 4100.0),
    (date(2019, 6, 26), 12900.0),
    (date(2019, 9, 30), 8300.0),
    (date(2019, 12, 31), 7190.0),
    (date(2020, 3, 16), 5030.0),
    (date(2020, 7, 31), 11350.0),
    (date(2020, 11, 30), 19700.0),
    (date(2020, 12, 31), 29000.0),
    (date(2021, 2, 21), 57500.0),
    (date(2021, 4, 14), 63500.0),
    (date(2021, 7, 20), 29800.0),
    (date(2021, 11, 9), 67550.0),
    (date(2022, 1, 31), 38480.0),
    (date(2022, 5, 11), 29000.0),
    (date(2022, 6, 18), 18970.0),
    (date(2022, 9, 30), 19430.0),
    (date(2022, 11, 21), 15760.0),
    (date(2023, 1, 1), 16600.0),
    (date(2023, 2, 20), 24800.0),
    (date(2023, 4, 6), 28040.0),
]


def trend_log_price(day: date) -> float:
    """Piecewise-linear interpolation of log price between anchors."""
    for (d0, p0), (d1, p1) in zip(ANCHORS, ANCHORS[1:]):
        if d0 <= day <= d1:
            frac = (day - d0).days / (d1 - d0).days
            return math.log(p0) + frac * (math.log(p1) - math.log(p0))
    raise ValueError(f"{day} outside anchor range")


def build_rows() -> list[str]:
    rng = Rng(SEED)
    rows = []
    noise = 0.0
    prev_close: float | None = None
    day = START
    while day <= END:
        noise = 0.97 * noise + rng.uniform(-0.02, 0.02)
        close = round(math.exp(trend_log_price(day) + noise), 6)
        opening = prev_close if prev_close is not None else round(close * 0.997, 6)
        hi_margin = rng.uniform(0.002, 0.03)
        lo_margin = rng.uniform(0.002, 0.03)
        high = round(max(opening, close) * (1.0 + hi_margin), 6)
        low = round(min(opening, close) * (1.0 - lo_margin), 6)
        volume = int(close * 3.0e5 * math.exp(rng.uniform(-0.6, 0.6)))
        rows.append(
            f"{day.isoformat()},{opening:.6f},{high:.6f},{low:.6f},"
            f"{close:.6f},{close:.6f},{volume}")
        prev_close = close
        day += timedelta(days=1)
    return rows


def main() -> None:
    out_dir = Path(__file__).resolve().parent.parent / "fixtures"
    out_dir.mkdir(exist_ok=True)
    csv_path = out_dir / "btc_usd_daily.csv"
    body = "Date,Open,High,Low,Close,Adj Close,Volume\n" + "\n".join(build_rows()) + "\n"
    csv_path.write_text(body, encoding="utf-8")

    digest = hashlib.sha256(csv_path.read_bytes()).hexdigest()
    manifest = {
        "file": csv_path.name,
        "rows": body.count("\n") - 1,
        "sha256": digest,
        "start_date": START.isoformat(),
        "end_date": END.isoformat(),
        "generator": "tools/make_fixture.py",
        "seed": SEED,
        "synthetic": True,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {csv_path} ({manifest['rows']} rows, sha256 {digest[:12]}...)")


if __name__ == "__main__":
    main()
