"""
From option quotes to a cumulative forward variance surface
===========================================================

The cumulative forward variance ``I_t^T`` is the value of a static strip of
out-of-the-money options weighted by ``2 / K^2``.  Under flat Black-Scholes
volatility 0.2 the strip is worth ``0.04 (T - t)``, which makes a clean
check of the quadrature.

A chain with one maturity missing per row is then assembled into a surface.
The gap is filled by monotone cubic Hermite interpolation, and the coverage
report says which cells were observed and which were imputed.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from fwdvar import MaturityGrid, TimeGrid
from fwdvar.ingest import OptionChain, black_scholes_chain, build_surface, log_strikes, strip_integrate

###############################################################################
# Strip error against strike density, over a fixed strike range.

counts = [100, 200, 400, 800, 1600, 3200]
errors = []
for m in counts:
    chain = black_scholes_chain([0.0], [1.0], strikes=log_strikes(1.0, m))
    errors.append(abs(strip_integrate(chain.group(0.0, 1.0), 1.0) - 0.04))
    print(f"{m:>5} strikes: |I - 0.04| = {errors[-1]:.2e}")

fig, ax = plt.subplots(figsize=(5, 4))
ax.loglog(counts, errors, "o-")
ax.set_xlabel("strikes on [0.01, 100]")
ax.set_ylabel("strip error")
fig.savefig("strip_convergence.png", dpi=120)

###############################################################################
# A 4 x 4 grid where maturity T = 0.75 is not quoted on the first two rows.
# A row needs at least two quoted maturities before anything can be imputed.

tg, mg = TimeGrid(4), MaturityGrid.uniform(4)
strikes = log_strikes(1.0, 1000)
early = black_scholes_chain([0.0, 0.25], [0.25, 0.5, 1.0], strikes=strikes)
late = black_scholes_chain([0.5, 0.75], [0.75, 1.0], strikes=strikes)
surface, report = build_surface(OptionChain(early.records + late.records), tg, mg)
print(report.to_text().split("stand_in")[0])
print(np.round(surface.values, 5))
print("exact:")
print(np.round(0.04 * np.clip(mg.maturities[None, :] - tg.times[:, None], 0, None), 5))
