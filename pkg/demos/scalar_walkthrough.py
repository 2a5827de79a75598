"""One state, one input: every quantity the solvers use, checked by hand.

With a = -1 and b = b2 = q = r = 1 the closed loop is a - b k = -(1 + k),
the cost is J(k) = (1 + k^2) / (2 (1 + k)) and its derivative is
(k^2 + 2k - 1) / (2 (1 + k)^2).
"""
import numpy as np

from sparselqr import IstaConfig, Plant, cost_J, fista_solve, grad_J, ista_solve, ista_step
from sparselqr import lqr_gain, surrogate_J
from sparselqr.sparsity import Regularizer

plant = Plant(A=[[-1.0]], B1=[[1.0]], B2=[[1.0]], Q=[[1.0]], R=[[1.0]], name="scalar")
K = np.array([[1.0]])

print("J(1)          =", cost_J(plant, K), " (closed form 0.5)")
print("dJ/dk at 1    =", grad_J(plant, K)[0, 0], " (closed form 0.25)")

# a single shrinkage step with curvature rho = 10 and weight gamma = 0.1
K1 = ista_step(plant, K, rho=10.0, gamma=0.1, regularizer=Regularizer())
print("one ISTA step =", K1[0, 0], " (S_0.01(1 - 0.025) = 0.965)")
print("bound         =", surrogate_J(plant, K1, K, 10.0), ">= J =", cost_J(plant, K1))

print("LQR gain      =", lqr_gain(plant)[0, 0], " (sqrt(2) - 1)")

# J(k) + 0.1 |k| is smallest where k^2 + 2k - 2/3 = 0
k_star = -1 + np.sqrt(5 / 3)
cfg = IstaConfig(gamma=0.1, tol=1e-8)
for name, solve in (("ISTA", ista_solve), ("FISTA", fista_solve)):
    res = solve(plant, lqr_gain(plant), cfg)
    print(f"{name:5s}: k = {res.K[0, 0]:.8f} (exact {k_star:.8f}) "
          f"after {res.trace.iterations} iterations")

# a large weight drives the gain all the way to zero
res = ista_solve(plant, lqr_gain(plant), IstaConfig(gamma=10.0))
print("gamma = 10    : k =", res.K[0, 0], " J =", res.J)
