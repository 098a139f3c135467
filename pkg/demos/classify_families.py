"""Train family representatives on straightened synthetic bodies and test
them over repeated random splits.

    python3 demos/classify_families.py [samples_per_family] [splits]
"""

import sys
import time

from unbend.classify import evaluate_splits, format_table
from unbend.evaluation import family_dataset

per_family = int(sys.argv[1]) if len(sys.argv) > 1 else 12
n_splits = int(sys.argv[2]) if len(sys.argv) > 2 else 20

t0 = time.perf_counter()
curves, labels = family_dataset(per_family, seed=7)
print(f"generated and unwrapped {len(curves)} bodies in {time.perf_counter() - t0:.1f}s")

rep = evaluate_splits(curves, labels, n_splits=n_splits, seed=0)
print(f"mean test accuracy {100 * rep['accuracy_mean']:.2f}% (sd {100 * rep['accuracy_std']:.2f}) "
      f"over {rep['splits']} splits; tuning converged on {100 * rep['converged_fraction']:.0f}%")
print(format_table(rep))
