"""Tuning a ten-layer unrolled shrinkage net on perturbed plants.

The untuned net is plain ISTA with a fixed step. Training adjusts each
layer's step, threshold and mixing weight so that ten layers land closer
to the converged reference gains. This is a small version of the full
experiment (fewer plants and epochs) so it runs in under a minute.
"""
from sparselqr import DatasetSpec, IstaConfig, TrainOptions, UnrolledNet, gen_dataset
from sparselqr import gen_multiagent, nmse_by_depth, train

spec = DatasetSpec(base=gen_multiagent(5), count=30, noise_sigma=1.0, seed=1)
examples, rejected = gen_dataset(spec, IstaConfig(gamma=1.0))
train_set, test_set = examples[:24], examples[24:]
print(f"{len(examples)} labelled plants ({rejected} draws rejected)")

net = UnrolledNet.initial(10, rho0=100.0, gamma=1.0)
result = train(net, train_set, TrainOptions(epochs=200, seed=0))
print(f"training loss {result.initial_loss:.4g} -> {result.final_loss:.4g} "
      f"({result.accepted} of 200 proposals kept)")

before = nmse_by_depth(net, test_set)
after = nmse_by_depth(result.net, test_set)
print("\ndepth  untuned   tuned")
for t in (1, 2, 5, 10):
    print(f"{t:5d}  {before[t - 1]:.3e}  {after[t - 1]:.3e}")
for i, p in enumerate(result.net.layers, 1):
    print(f"layer {i:2d}: w1 = {p.w1:.4g}  w2 = {p.w2:.4g}  w3 = {p.w3:.4g}")
