import json
import os
import sys
from datetime import datetime

sys.path.append(os.path.abspath("."))

try:
    from dotenv import load_dotenv

    from src.config import load_run_config
    from src.segmentation.model import build_model
    from src.segmentation.profiling import measure_inference_time
except ImportError as e:
    print(f"Error importing required modules: {e}")
    print("Please make sure all dependencies are installed: pip install -r requirements.txt")
    sys.exit(1)

load_dotenv()

INPUT_SIZES = [64, 128, 224]


def run_benchmark(repeats=5):
    """Time single-image inference of both heads at several input sizes"""
    config = load_run_config(os.getenv("WOUNDFORMER_CONFIG"))
    print(f"Running benchmark with {repeats} repeats per setting...")

    results = []
    for decoder_kind in ("spatial", "allmlp"):
        model = build_model(config, decoder_kind)
        for size in INPUT_SIZES:
            print(f"\n{decoder_kind} decoder at {size}x{size}")
            profile = measure_inference_time(model, size, repeats=repeats)
            print(f"  Time: {profile.mean_seconds:.4f}s ± {profile.std_seconds:.4f}s")
            print(f"  Params: {profile.params_millions:.3f} M")
            print(f"  GFLOPs: {profile.gflops:.3f}")
            results.append(
                {
                    "decoder": decoder_kind,
                    "input_size": size,
                    "mean_seconds": profile.mean_seconds,
                    "std_seconds": profile.std_seconds,
                    "params_millions": profile.params_millions,
                    "gflops": profile.gflops,
                }
            )

    with open("benchmark_results.json", "w") as f:
        json.dump({"timestamp": datetime.now().isoformat(), "repeats": repeats, "results": results}, f, indent=2)

    print("\nResults saved to benchmark_results.json")


def main():
    """Main function to run the benchmark"""
    print("=== WoundFormer Inference Benchmark ===")
    run_benchmark(repeats=5)


if __name__ == "__main__":
    main()
