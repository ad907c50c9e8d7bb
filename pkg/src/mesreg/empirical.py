"""Order-statistic helpers shared by the rolling comparator and the portfolio metrics."""
import math

import numpy as np


def type1_rank(beta, size):
    """1-based rank of the type-1 (inverse ECDF) beta-quantile in a sample of ``size``.

    ``ceil(beta * size)`` with a guard against products such as
    ``0.95 * 100 = 95.00000000000001``.
    """
    return min(size, max(1, math.ceil(round(beta * size, 9))))


def type1_quantile(a, beta, axis=-1):
    """Smallest order statistic whose ECDF value reaches ``beta``."""
    a = np.asarray(a, dtype=float)
    k = type1_rank(beta, a.shape[axis]) - 1
    return np.take(np.partition(a, k, axis=axis), k, axis=axis)
