#!/usr/bin/env python3
"""A miniature end-to-end run of the experiment harness.

Four training recipes over the same data and seed, sharing trained cells:

  standard      plain cross-entropy
  blackout      plain CE on images with the background zeroed out
  lambda_equal  penalty with one weight for both regions, searched on a line
  lambda_vary   in-box and out-of-box weights searched independently

Each recipe picks its hyperparameters on held-out splits, then reports test
robust accuracy over the attack radii plus the saliency metrics.  This is
the same code path as the `regiongrad grid` CLI command, shrunk to one seed
and a 3-value grid so it finishes in a couple of minutes.  Output CSVs land
in ./grid_out.
"""

import regiongrad as rg

SPEC = rg.DataSpec(classes=4, count=600, height=24, width=24,
                   noise=0.15, distractors=8, min_object=8, max_object=12)
data = rg.generate(SPEC, seed=0)

config = rg.ExperimentConfig(
    arch=rg.ArchConfig(input_shape=(1, 24, 24),
                       conv_blocks=((6, 3, "relu"), (12, 3, "relu")),
                       hidden=32, classes=4),
    sgd=rg.SgdConfig(learning_rate=0.05, batch_size=32, epochs=25),
    grid_values=(0.0, 0.1, 1.0),
)

cache = {}
by_algorithm = rg.run_grid(data, seeds=[0], config=config, cache=cache)

radii = rg.epsilon_grid()
print(f"\n{'algorithm':14s} {'tables (l1,l2)':16s} {'acc':>6s} {'RA@{:.1f}'.format(radii[-1]):>7s}"
      f" {'pointing':>9s} {'localiz.':>9s}")
for name, results in by_algorithm.items():
    r = results[0]
    if r.diverged:
        print(f"{name:14s} (all grid cells diverged)")
        continue
    pair = f"({r.lambda1:g},{r.lambda2:g})"
    print(f"{name:14s} {pair:16s} {r.standard_accuracy:6.3f} {r.robust_accuracy[-1]:7.3f}"
          f" {r.saliency_metric:+9.3f} {r.localization_accuracy:9.3f}")

print("\n(acc/pointing/localization belong to the clean-accuracy winner on the hyper")
print(" split -- at this tiny scale that is often (0,0); each RA entry comes from the")
print(" radius's own robust winner, which is where the penalty shows up)")

exports = rg.build_exports(data, by_algorithm, cache, config, count=4)
paths = rg.report([r for rs in by_algorithm.values() for r in rs], "grid_out", exports)
print(f"\nwrote {len(paths)} files to grid_out/ (robustness.csv, metrics.csv, saliency PGMs)")
