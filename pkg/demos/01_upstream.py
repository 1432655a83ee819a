"""Upstream state for the three preset gases.

Prints the admissible flux window, the upstream pressure and the stream
closure constants for each preset.  The bump presets warn that these small
fluxes sit below their nominal window; the solve is still admissible.
"""
import numpy as np

from axijet.upstream import build_stream_profiles, preset, solve_upstream

for name, Q in (("constant", 0.02), ("quadratic-bump", 0.02), ("isentropic-bump", 0.05)):
    prof = preset(name)
    st = solve_upstream(prof, Q)
    gas = build_stream_profiles(st, 0.02)
    y = np.linspace(0.0, prof.Hbar, 5)
    print(f"{name:16s} Q={Q:.3f}  window=({st.Q_star:.4f}, {st.Q_upper:.4f})  "
          f"pbar={st.pbar:.6f}  kappa={st.kappa:.4f}  kappa0={gas.kappa0:.4f}")
    print("   rhobar*ubar on y=0..Hbar:", np.array2string(st.mass_flux_density(y), precision=5))
