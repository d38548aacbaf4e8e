"""Finite-difference verification of tape gradients"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import ArgumentError
from src.tensor_core.tensor import DTYPE, GradTape, Tensor

logger = logging.getLogger(__name__)

KINK_TOLERANCE = 1e-2


@dataclass
class InputCheck:
    index: int
    shape: Tuple[int, ...]
    max_rel_error: float
    checked: int
    flagged: List[int] = field(default_factory=list)


@dataclass
class GradcheckReport:
    tolerance: float
    inputs: List[InputCheck]

    @property
    def max_rel_error(self) -> float:
        return max((check.max_rel_error for check in self.inputs), default=0.0)

    @property
    def flagged(self) -> int:
        return sum(len(check.flagged) for check in self.inputs)

    @property
    def passed(self) -> bool:
        return all(check.max_rel_error < self.tolerance for check in self.inputs)

    def summary(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (
            f"{status}: max rel err {self.max_rel_error:.3e} over {len(self.inputs)} input(s), "
            f"{self.flagged} kink element(s) held to their one-sided bracket"
        )


def gradcheck(
    op_closure: Callable[..., Tensor],
    inputs: Sequence[Union[Tensor, np.ndarray]],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    max_checks_per_input: Optional[int] = None,
    seed: int = 0,
) -> GradcheckReport:
    """Compare tape gradients of ``op_closure`` with central finite differences.

    The scalar objective is ``sum(op_closure(*inputs) * R)`` for a fixed random
    projection ``R``. Elements where forward and backward one-sided differences
    disagree (a kink such as relu at 0) are reported in ``flagged``; there the analytic
    value only has to lie between the two one-sided slopes, and its error is the distance
    outside that bracket.

    Args:
        op_closure: Function of the input tensors; parameters it closes over are held fixed
        inputs: Arrays or tensors; copied, never modified
        tolerance: The check passes when every max relative error is strictly below it
        step: Finite-difference step
        max_checks_per_input: Check a random subset of elements when set

    Returns:
        GradcheckReport with the max relative error per input
    """
    if step <= 0:
        raise ArgumentError(f"finite-difference step must be positive, got {step}")
    rng = np.random.default_rng(seed)
    arrays = [np.array(x.data if isinstance(x, Tensor) else x, dtype=DTYPE) for x in inputs]

    leaves = [Tensor(array, requires_grad=True) for array in arrays]
    with GradTape():
        out = op_closure(*leaves)
        projection = rng.standard_normal(out.shape)
        objective = (out * Tensor(projection)).sum()
        objective.backward()
    analytic = [leaf.grad.copy() for leaf in leaves]

    def evaluate() -> float:
        return float(np.sum(op_closure(*(Tensor(array) for array in arrays)).data * projection))

    base_value = evaluate()
    checks = []
    for index, array in enumerate(arrays):
        flat = array.reshape(-1)
        positions = np.arange(flat.size)
        if max_checks_per_input is not None and flat.size > max_checks_per_input:
            positions = np.sort(rng.choice(flat.size, size=max_checks_per_input, replace=False))

        numeric = np.empty(positions.size)
        one_sided = np.empty((positions.size, 2))
        for k, position in enumerate(positions):
            original = flat[position]
            flat[position] = original + step
            plus = evaluate()
            flat[position] = original - step
            minus = evaluate()
            flat[position] = original
            numeric[k] = (plus - minus) / (2.0 * step)
            one_sided[k] = ((plus - base_value) / step, (base_value - minus) / step)

        expected = analytic[index].reshape(-1)[positions]
        floor = max(1e-8, 1e-3 * float(np.max(np.abs(numeric), initial=0.0)))
        kink_scale = np.maximum(np.abs(one_sided).max(axis=1), floor)
        kinks = np.abs(one_sided[:, 0] - one_sided[:, 1]) > KINK_TOLERANCE * kink_scale
        denominator = np.maximum(np.maximum(np.abs(expected), np.abs(numeric)), floor)
        lower, upper = one_sided.min(axis=1), one_sided.max(axis=1)
        outside = np.maximum(lower - expected, 0.0) + np.maximum(expected - upper, 0.0)
        rel = np.where(kinks, outside, np.abs(expected - numeric)) / denominator

        check = InputCheck(
            index=index,
            shape=array.shape,
            max_rel_error=float(rel.max(initial=0.0)),
            checked=int(positions.size),
            flagged=[int(p) for p in positions[kinks]],
        )
        if check.flagged:
            logger.warning(
                f"gradcheck input {index}: {len(check.flagged)} non-differentiable element(s) "
                "checked against their one-sided differences only"
            )
        logger.debug(f"gradcheck input {index} {array.shape}: max rel err {check.max_rel_error:.3e}")
        checks.append(check)

    return GradcheckReport(tolerance=tolerance, inputs=checks)
