"""Atomistic interface solve for the liquid/vapour data of Example 1.

Usage: python3 demos/example1_md_riemann.py [seed]
Takes about a minute on one core with the desk preset.
"""

import sys

import numpy as np

from mixhmm.continuum import EXAMPLE_1
from mixhmm.md.riemann import DESK_PARAMS, solve_md_riemann

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
sol = solve_md_riemann(*EXAMPLE_1, DESK_PARAMS, seed=seed)
np.set_printoptions(precision=2, suppress=True)
print(f"s   = {sol.s:+.2f} m/s (HAC stderr {sol.s_stderr:.2f})")
print(f"u*- = {sol.u_minus}  [rho0, rho1 kg/m3, m0, m1 kg/(m2 s)]")
print(f"u*+ = {sol.u_plus}")
for w in sol.warnings:
    print("warning:", w)
