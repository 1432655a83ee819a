"""Upsilon(1-) against Lambda on a coarse grid.

The fitted Lambda is where the sign changes: small Lambda leaves the
free boundary above the nozzle lip, large Lambda pulls it below.  An
infinite value means no plug region reached the top row.
"""
import warnings

import numpy as np

from axijet.fit import solve_jet
from axijet.geometry import Nozzle, build_grid
from axijet.upstream import build_stream_profiles, preset, solve_upstream

Q = 0.02
gas = build_stream_profiles(solve_upstream(preset("constant"), Q), 0.02)
nozzle = Nozzle.tangent(2.0)
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    dom = build_grid(nozzle, 1.0, 3.0, 1 / 16, 1 / 16)

psi = None
print(" Lambda   Upsilon(1-)   energy")
for L in np.linspace(0.02, 0.10, 9):
    js = solve_jet(nozzle, dom, gas, L, psi0=psi)
    psi = js.field.psi
    print(f"{L:7.4f}  {js.phi:+10.5f}  {js.report.energy:.6e}")
