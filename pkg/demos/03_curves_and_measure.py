"""Admissible curves, the invariant density and returns near y = 0.

Pushes horizontal curves forward, checks that they are not flat,
computes an Ulam approximation of the invariant density on a coarse
grid and estimates how often orbits come close to the critical line.

    python3 demos/03_curves_and_measure.py
"""
import numpy as np

from mtskew.curves import check_linear_approx, check_nonflat, evolve_horizontal, random_words
from mtskew.expanding import build_model
from mtskew.measures import attractor, build_ulam, slow_recurrence, uniqueness_diagnostic
from mtskew.mt_params import find_mt_parameter
from mtskew.skew import build_system

system = build_system(build_model(find_mt_parameter(2, 1, (1.9, 2.0)), m1=3),
                      find_mt_parameter(3, 1, (1.5, 1.6)), 1e-3)
rng = np.random.default_rng(3)

# Images of horizontal curves under F^n are graphs over base elements.
words = random_words(system, 6, 10, rng)
curves = [evolve_horizontal(system, y, 6, [w])[0] for y, w in zip(rng.uniform(-1, 1, 10), words)]
rep = check_nonflat(curves)
print(f"non-flatness: l0 = {rep.l0}, B_hat = {rep.B:.5f}, A_hat = {rep.A:.3f}")
one_step = evolve_horizontal(system, 0.0, 1)
print(f"X' - alpha T after one step: {max(check_linear_approx(X)[0] for X in one_step):.1e}")

# Ulam's method on a 128 x 64 grid; the theta marginal is uniform.
u = build_ulam(system, 128, 64)
print(f"\nUlam: {u.steps} power steps, residual {u.residual:.1e}, "
      f"theta marginal range [{u.theta_marginal().min() * 128:.6f}, {u.theta_marginal().max() * 128:.6f}] x 1/128")
print(f"distance between limits from 4 random starts: {uniqueness_diagnostic(u, 4):.1e}")
counts = [attractor(system, n, 128, 64).count for n in range(4)]
print("cells covered by F^n(rectangle), n = 0..3:", counts)

# Near-critical visits are rare at this coupling: S_n / n is small and noisy.
rs = slow_recurrence(system, n_orbits=100, n_list=(1000, 10000), epsilon=1e-3)
print(f"\nslow recurrence (delta = {rs.delta:.2e}): fractions {rs.fractions}, "
      f"mean S_n/n {np.round(rs.mean_rate, 6)}")
