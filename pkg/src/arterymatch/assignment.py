"""Decoding a predicted assignment matrix into a one-to-one matching.

The network outputs an n1 x n2 matrix of matching probabilities.  The decoder
picks the maximum-total-probability injection of rows into columns with the
rectangular Hungarian algorithm, then refines ties so that the result is the
lexicographically smallest optimal assignment (row 0 gets the lowest column
compatible with optimality, then row 1, ...).  A per-row argmax decoder is
kept for ablations; it can assign one column twice.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ShapeError

__all__ = ["decode_assignment", "argmax_assignment", "assignment_total"]


def _check_matrix(probabilities: np.ndarray) -> np.ndarray:
    matrix = np.asarray(probabilities, dtype=np.float64)
    if matrix.ndim != 2:
        raise ShapeError(f"assignment matrix must be 2-D, got shape {matrix.shape}")
    if matrix.shape[0] > matrix.shape[1]:
        raise ShapeError(
            f"assignment matrix needs n1 <= n2, got {matrix.shape[0]}x{matrix.shape[1]}"
        )
    if matrix.size and (matrix.min() < 0.0 or matrix.max() > 1.0):
        raise ShapeError("assignment matrix entries must lie in [0, 1]")
    return matrix


def _optimal_total(matrix: np.ndarray) -> float:
    rows, cols = linear_sum_assignment(matrix, maximize=True)
    return float(sum(float(matrix[r, c]) for r, c in zip(rows, cols)))


def assignment_total(matrix: np.ndarray, assignment: list[tuple[int, int]]) -> float:
    """Total probability of an assignment, summed in row order."""
    return float(sum(float(matrix[i, a]) for i, a in sorted(assignment)))


def decode_assignment(probabilities: np.ndarray) -> list[tuple[int, int]]:
    """Maximum-total-probability one-to-one matching, ties broken by lowest (i, a).

    Every row is matched to exactly one distinct column (n1 <= n2 required).
    """
    matrix = _check_matrix(probabilities)
    n1, n2 = matrix.shape
    if n1 == 0:
        return []
    best = _optimal_total(matrix)

    chosen: list[tuple[int, int]] = []
    used: list[int] = []
    prefix = 0.0
    tol = 1e-9 * max(1.0, abs(best))
    for i in range(n1):
        remaining_rows = np.arange(i + 1, n1)
        free_cols = np.array([c for c in range(n2) if c not in used], dtype=np.intp)
        for a in free_cols:
            rest_cols = free_cols[free_cols != a]
            if remaining_rows.size:
                sub = matrix[np.ix_(remaining_rows, rest_cols)]
                rest = _optimal_total(sub)
            else:
                rest = 0.0
            if prefix + float(matrix[i, a]) + rest >= best - tol:
                chosen.append((i, int(a)))
                used.append(int(a))
                prefix += float(matrix[i, a])
                break
        else:  # numerically impossible if Hungarian is correct
            raise AssertionError("no column preserved optimality; tie tolerance too tight")
    return chosen


def argmax_assignment(probabilities: np.ndarray) -> list[tuple[int, int]]:
    """Per-row argmax decode (ablation only; not one-to-one in general)."""
    matrix = _check_matrix(probabilities)
    return [(i, int(np.argmax(matrix[i]))) for i in range(matrix.shape[0])]
