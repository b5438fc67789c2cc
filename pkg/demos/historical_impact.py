"""Historical employment impact of observed burns, by region.

Convolves an estimated per-km2 response with every county's burn history
(responses truncated after 36 months), then averages counties within each
region using population weights. Also projects the impact of a
hypothetical fire season: 50 km2 burned in each of three summer months.

Run: python demos/historical_impact.py [output.csv]
"""
import sys

import numpy as np

from firelp.design import ModelSpec
from firelp.hei import panel_hei, project_hei, write_hei
from firelp.irf import estimate_irf
from firelp.synth import DgpConfig, generate

panel, _ = generate(DgpConfig(n_counties=200, n_periods=180, seed=3))
irf = estimate_irf(panel, ModelSpec("emp", "burn", horizons=36))

impacts, regional = panel_hei(panel, irf, L=36)
for name in regional.regions:
    series = regional[name]
    worst = int(np.argmin(series))
    print(f"{name:9s} mean {series.mean():+.5f} pp/month, worst month {worst} ({series[worst]:+.4f})")

season = np.zeros(48)
season[[6, 7, 8]] = 50.0
path = project_hei(irf, season, L=36)
print(f"\nprojected season: trough {path.min():+.4f} pp in month {int(path.argmin())}, "
      f"back to {path[-1]:+.4f} by month {season.size - 1}")

if len(sys.argv) > 1:
    write_hei(regional, panel.periods, panel.frequency, sys.argv[1])
    print(f"wrote {sys.argv[1]}")
