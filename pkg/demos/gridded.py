"""From gridded model output to station cases.

Run with ``python demos/gridded.py``. Builds 3-hourly gridded ensemble
fields, interpolates them to a station and reduces them to a daily maximum.
"""
import datetime as dt
import tempfile
from pathlib import Path

import numpy as np

from windemos.data import GriddedEnsembleField, GridSpec, Station, bilinear_to_station, daily_max_reduce, read_grid, write_grid

rng = np.random.default_rng(1)
grid = GridSpec(lat0=47.0, lon0=6.0, dlat=0.3, dlon=0.3, nlat=8, nlon=10)
station = Station("Feldberg", 47.87, 8.0)
k = 5

# One field per forecast step; wind picks up in the afternoon.
steps = {}
with tempfile.TemporaryDirectory() as tmp:
    for hour in range(3, 25, 3):
        base = 6.0 + 3.0 * np.sin(np.pi * hour / 24)
        values = base + rng.normal(0, 1.0, (grid.nlat, grid.nlon, k))
        field = GriddedEnsembleField(grid, np.maximum(values, 0.0), dt.date(2010, 3, 1), hour)
        # a round trip through the plain-text grid format
        path = Path(tmp) / f"step{hour:02d}.txt"
        write_grid(field, path)
        steps[hour] = bilinear_to_station(read_grid(path), station)
        print(f"+{hour:02d}h members at {station.station_id}: {np.round(steps[hour], 2)}")

print("day-1 maximum per member:", np.round(daily_max_reduce(steps, lead_day=1), 2))

try:
    bilinear_to_station(field, Station("Zugspitze", 47.42, 10.98))
except ValueError as exc:
    print("outside the grid:", exc)
