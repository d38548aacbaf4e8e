"""Two-sided Wilcoxon signed-rank test for paired samples"""
import logging
import math
from typing import Sequence

import numpy as np
from scipy.stats import norm, rankdata

from src.errors import ArgumentError, UndefinedTestError
from src.metrics.report import PairedTestResult

logger = logging.getLogger(__name__)

MIN_PAIRS = 5
EXACT_MAX_PAIRS = 20


def _exact_p_value(ranks: np.ndarray, statistic: float) -> float:
    """P(min(T+, T-) <= W) over all 2^m equally likely sign assignments.

    Average ranks are multiples of 1/2, so the distribution of T+ is built over doubled
    integer ranks by dynamic programming.
    """
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for rank in doubled:
        shifted = np.zeros_like(counts)
        shifted[rank:] = counts[: total + 1 - rank]
        counts = counts + shifted
    sums = np.arange(total + 1)
    threshold = int(round(2.0 * statistic))
    extreme = counts[np.minimum(sums, total - sums) <= threshold].sum()
    return min(1.0, float(extreme) / float(2 ** len(ranks)))


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> PairedTestResult:
    """Paired test of ``a`` against ``b``.

    Zero differences are dropped. Ranks of |a - b| use averages for ties; W is the smaller
    signed-rank sum. Up to 20 pairs the p-value is exact, above that it uses the normal
    approximation with tie and continuity corrections. The effect size is r = |Z| / sqrt(m)
    with Z = (W - m(m+1)/4) / sd.

    Raises:
        ArgumentError: On unequal lengths or fewer than five nonzero differences
        UndefinedTestError: If every difference is zero
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ArgumentError(f"paired samples must be equal-length vectors, got {a.shape} and {b.shape}")
    diffs = a - b
    diffs = diffs[diffs != 0]
    m = diffs.size
    if m == 0:
        raise UndefinedTestError("all paired differences are zero; the test is undefined")
    if m < MIN_PAIRS:
        raise ArgumentError(f"need at least {MIN_PAIRS} nonzero differences, got {m}")

    ranks = rankdata(np.abs(diffs), method="average")
    w_plus = float(ranks[diffs > 0].sum())
    w_minus = float(ranks[diffs < 0].sum())
    statistic = min(w_plus, w_minus)

    mean = m * (m + 1) / 4.0
    _, tie_sizes = np.unique(ranks, return_counts=True)
    variance = m * (m + 1) * (2 * m + 1) / 24.0 - float(np.sum(tie_sizes**3 - tie_sizes)) / 48.0
    sd = math.sqrt(variance)
    z = (statistic - mean) / sd

    if m <= EXACT_MAX_PAIRS:
        method = "exact"
        p_value = _exact_p_value(ranks, statistic)
    else:
        method = "normal"
        corrected = min(0.0, statistic - mean + 0.5) / sd
        p_value = min(1.0, 2.0 * float(norm.cdf(corrected)))

    result = PairedTestResult(
        statistic=statistic,
        p_value=p_value,
        effect_size_r=min(1.0, abs(z) / math.sqrt(m)),
        z_score=z,
        n_pairs=m,
        method=method,
    )
    logger.debug(f"Wilcoxon ({method}): W={statistic}, p={p_value:.4g}, r={result.effect_size_r:.3f}, m={m}")
    return result
