import json
import os
import sys
import time

sys.path.append(os.path.abspath("."))

from dotenv import load_dotenv  # noqa: E402

from src.config import load_run_config  # noqa: E402
from src.training.compare import run_decoder_comparison  # noqa: E402

SEEDS = [0, 1, 2, 3, 4]
N_SAMPLES = 64
EPOCHS = 30

# Spatial decoder mean may trail All-MLP by at most this much
MARGIN = 0.02


def run_evaluation():
    load_dotenv()
    config = load_run_config(os.getenv("WOUNDFORMER_CONFIG") or "data/run_config.json")
    print(f"--- Decoder comparison: {len(SEEDS)} seeds, {N_SAMPLES} boundary-heavy samples, {EPOCHS} epochs ---")

    start_time = time.time()
    outcome = run_decoder_comparison(config, SEEDS, n_samples=N_SAMPLES, epochs=EPOCHS)
    elapsed = time.time() - start_time

    print(outcome.per_seed.to_string(index=False))
    means = outcome.per_seed[["spatial", "allmlp"]].mean()
    print(f"\nMean test DSC: spatial {means['spatial']:.4f}, allmlp {means['allmlp']:.4f}")
    print(outcome.comparison.summary())

    passed = means["spatial"] >= means["allmlp"] - MARGIN
    print(f"{'PASS' if passed else 'FAIL'}: spatial decoder is {'not ' if passed else ''}materially worse")
    print(f"Elapsed: {elapsed / 60:.1f} minutes")

    with open("comparison_results.json", "w") as f:
        json.dump(
            {
                "per_seed": outcome.per_seed.to_dict(orient="records"),
                "summary": outcome.comparison.summary(),
                "passed": bool(passed),
            },
            f,
            indent=2,
        )
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(run_evaluation())
