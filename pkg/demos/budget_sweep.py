"""Hard nonzero budgets: projected gradient (ISPA) against GraSP.

For each budget s the projected solver keeps at most s nonzeros in K; the
GraSP baseline counts all entries as well (no diagonal exemption) so the
two are compared on the same footing.
"""
from sparselqr import GraspConfig, IspaConfig, gen_multiagent, grasp_solve, ispa_solve, lqr_gain
from sparselqr.sparsity import Ball, nnz

plant = gen_multiagent(5)
K0 = lqr_gain(plant)
print(f"{'s':>4} {'J ispa':>9} {'nnz':>4} {'iters':>6} | {'J grasp':>9} {'nnz':>4}")
for s in range(60, 141, 20):
    a = ispa_solve(plant, K0, IspaConfig(radius=Ball("l0", s)))
    b = grasp_solve(plant, K0, GraspConfig(s=s, exempt_diagonal=False))
    print(f"{s:4d} {a.J:9.4f} {nnz(a.K):4d} {a.trace.iterations:6d} | {b.J:9.4f} {nnz(b.K):4d}")
