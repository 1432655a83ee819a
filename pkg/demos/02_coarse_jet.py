"""Fit Lambda for the tangent nozzle on a coarse grid and export the flow.

Runs in well under a minute.  Output goes to ./coarse_jet (or argv[1]).
"""
import sys
import warnings

from axijet.fit import fit_lambda
from axijet.geometry import Nozzle, build_grid
from axijet.postproc import downstream_state, export, recover_fields
from axijet.solver import validate_structure
from axijet.thermo import lambda_eps
from axijet.upstream import build_stream_profiles, preset, solve_upstream

out = sys.argv[1] if len(sys.argv) > 1 else "coarse_jet"
Q, eps = 0.02, 0.02
prof = preset("constant")
st = solve_upstream(prof, Q)
gas = build_stream_profiles(st, eps)

nozzle = Nozzle.tangent(2.0)
with warnings.catch_warnings():
    warnings.simplefilter("ignore")  # the tangent wall is steeper than the grid ratio
    dom = build_grid(nozzle, 1.0, 3.0, 1 / 16, 1 / 16)

res = fit_lambda(nozzle, dom, gas)
f = res.solve.field
print(f"Lambda* = {res.Lambda_star:.5f}  |Upsilon(1-)| = {abs(res.fit_residual):.4f}  "
      f"trials = {len(res.history)}")
s = validate_structure(f, dom, gas)
print("structure:", {k: s[k] for k in ("monotone_x", "plug_suffix", "subsonic")},
      f"margin {s['subsonic_margin']:.4f}")

sol = recover_fields(f, dom, gas)
sol.boundary = res.solve.boundary
down = downstream_state(f.Lambda, gas, prof, st)
sol.downstream = down
print(f"downstream jet radius {down.H_low:.4f}  outer pressure {down.p_out:.5f}")
summary = dict(Q=Q, Lambda=f.Lambda, lambda_eps=lambda_eps(f.Lambda, gas), pbar=st.pbar,
               p_out=down.p_out, H_low=down.H_low, kappa=st.kappa, kappa0=gas.kappa0,
               subsonic_margin=s["subsonic_margin"], upstream_residual=float("nan"),
               downstream_residual=float("nan"))
export(sol, out, summary)
print("wrote", out)
