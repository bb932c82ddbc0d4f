# harness.py -- generated by rigor (template python/v1). Do not edit.
#
# The implementation module supplies optimize(data), get_baseline(data) and
# evaluate_model(model, data). Data loading and the statistical test are
# owned by this file.
import argparse
import csv
import json
import pickle
import sys

import implementation
from verified_stats import execute_paired_ttest

IDEA_LABEL = "RBF Kernel Parameter Optimization"
REPS = 3
FOLDS = 10
ARTIFACT_FILE = "exploration_artifacts.pkl"
RESULT_SENTINEL = "RIGOR_RESULT"


def load_table(path):
    with open(path, newline="") as handle:
        rows = list(csv.DictReader(handle))
    for row in rows:
        for key, value in row.items():
            try:
                row[key] = float(value)
            except (TypeError, ValueError):
                pass
    return rows


def run_exploration():
    data = load_table("data/exploration.csv")
    artifact = implementation.optimize(data)
    baseline = None
    return artifact, baseline


def run_validation(artifact, baseline, seed):
    data = load_table("data/validation.csv")
    p_value = execute_paired_ttest(data, artifact, baseline, implementation.evaluate_model, reps=3, folds=10, seed=seed)
    return p_value


def emit_result(p_value):
    payload = json.dumps({"p_value": float(p_value), "n_pairs": REPS * FOLDS})
    sys.stdout.flush()
    print(RESULT_SENTINEL + " " + payload, flush=True)


def main(argv=None):
    parser = argparse.ArgumentParser(description="Execution harness for " + IDEA_LABEL)
    parser.add_argument("--phase", choices=["explore", "validate", "full"], default="full")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    if args.phase == "explore":
        artifact, baseline = run_exploration()
        with open(ARTIFACT_FILE, "wb") as handle:
            pickle.dump((artifact, baseline), handle)
        return 0
    if args.phase == "validate":
        with open(ARTIFACT_FILE, "rb") as handle:
            artifact, baseline = pickle.load(handle)
    else:
        artifact, baseline = run_exploration()
    emit_result(run_validation(artifact, baseline, args.seed))
    return 0


if __name__ == "__main__":
    sys.exit(main())
