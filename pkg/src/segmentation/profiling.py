import logging
import time
from dataclasses import dataclass

import numpy as np

from src.segmentation.counting import flops_from_tape
from src.segmentation.model import WoundFormer
from src.tensor_core.tensor import GradTape, Tensor

logger = logging.getLogger(__name__)


@dataclass
class InferenceProfile:
    mean_seconds: float
    std_seconds: float
    params_millions: float
    gflops: float

    def summary(self) -> str:
        return (
            f"{self.mean_seconds:.3f}±{self.std_seconds:.3f} s/image, "
            f"{self.params_millions:.3f} M params, {self.gflops:.3f} GFLOPs"
        )


def measure_inference_time(
    model: WoundFormer, input_size: int, repeats: int = 10, warmup: int = 1, seed: int = 0
) -> InferenceProfile:
    """Wall-clock seconds per single-image prediction, with size and FLOP figures"""
    rng = np.random.default_rng(seed)
    image = rng.uniform(size=(1, model.encoder_cfg.in_channels, input_size, input_size))
    model.eval()
    for _ in range(warmup):
        model.predict(image)

    timings = []
    for _ in range(repeats):
        start = time.perf_counter()
        model.predict(image)
        timings.append(time.perf_counter() - start)

    with GradTape() as tape:
        model(Tensor(image))
    profile = InferenceProfile(
        mean_seconds=float(np.mean(timings)),
        std_seconds=float(np.std(timings)),
        params_millions=model.num_parameters() / 1e6,
        gflops=flops_from_tape(tape, 1) / 1e9,
    )
    logger.info(f"Inference profile at {input_size}x{input_size}: {profile.summary()}")
    return profile
