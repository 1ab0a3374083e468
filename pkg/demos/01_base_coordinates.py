"""Certified base parameters and the expanding coordinate.

Locates two Misiurewicz-Thurston parameters, builds the conjugated
expanding map on the base and prints the expansion constants, the
first Markov levels and a distortion check.

    python3 demos/01_base_coordinates.py
"""
import numpy as np

from mtskew.expanding import build_model, distortion_report, markov_partition, u_of_x
from mtskew.mt_params import check_topological_exactness, find_mt_parameter, postcritical_set

chebyshev = find_mt_parameter(2, 1, (1.9, 2.0))   # 0 -> 2 -> -2 -> -2
cubic = find_mt_parameter(3, 1, (1.5, 1.6))       # root of c^3 - 2c^2 + 2c - 2
for cert in (chebyshev, cubic):
    print(f"c = {cert.c:.12f}  (k, p) = ({cert.preperiod}, {cert.period})  "
          f"residual {cert.residual:.1e}  post-critical set {np.round(postcritical_set(cert).points, 6)}")

# At a = 2 the coordinate is u(x) = arcsin(x / 2) and h0 is the tent map.
model = build_model(chebyshev, m1=3)
x = np.linspace(-2, 2, 5)
print("\nu(x) at a=2:", np.round(u_of_x(model, x), 12), "vs arcsin(x/2):", np.round(np.arcsin(x / 2), 12))
print(f"lambda_a = {model.lambda_a:.10f}, m0 = {model.m0}, lambda_g = {model.lambda_g:.4f}")
for n in range(4):
    q = markov_partition(model, n)
    print(f"  level {n}: {q.n_elements:3d} elements, nested {q.nested}, Markov {q.markov}")
rep = distortion_report(model, 3, 1000, np.random.default_rng(0))
print(f"distortion constant at level 3: C_d = {rep.C_d:.3f}")

# The cubic parameter has a smaller expansion constant, so more base
# iterates are needed before lambda^m exceeds 4.
other = build_model(cubic)
exact, _ = check_topological_exactness(other)
print(f"\na = {cubic.c:.6f}: lambda_a = {other.lambda_a:.7f}, m0 = {other.m0}, "
      f"topologically exact: {exact}")
