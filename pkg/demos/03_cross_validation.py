"""
Comparing engines with repeated stratified cross-validation
===========================================================

A reduced protocol (one repetition of 5 folds, fixed predictor) keeps this
quick.  The full protocol is ``Protocol()``: 2 x 10 folds with an inner
3-fold grid search, as used by the acceptance suite.
"""

import sys

from nrelaggs import datasets
from nrelaggs.evaluation import Protocol, run_benchmark
from nrelaggs.model import NRelaggsConfig

name = sys.argv[1] if len(sys.argv) > 1 else "trains"
db = datasets.load(name)

# The fixed config has both width factors at 1.0, so nrelaggs and fix_nrelaggs
# coincide here; drop `config` to let each engine search its own grid.
protocol = Protocol(folds=5, repeats=1, seed=0, config=NRelaggsConfig(predictor_layers=(50,)))
print(f"{'engine':14s} {'accuracy':>16s} {'AUROC':>16s} {'seconds':>8s}")
for engine in ("majority", "relaggs", "fix_nrelaggs", "nrelaggs"):
    r = run_benchmark(db, engine, protocol, dataset=name)
    print(f"{engine:14s} {r.accuracy_mean:8.3f} ± {r.accuracy_std:5.3f} {r.auroc_mean:8.3f} ± {r.auroc_std:5.3f} {r.wall_clock_seconds:8.1f}")
