import itertools

import numpy as np
import pytest

from arterymatch.assignment import argmax_assignment, assignment_total, decode_assignment
from arterymatch.errors import ShapeError


def brute_force_best_total(matrix):
    """Exhaustive enumeration over all injections of rows into columns."""
    n1, n2 = matrix.shape
    best = -1.0
    for cols in itertools.permutations(range(n2), n1):
        total = 0.0
        for i in range(n1):
            total = total + float(matrix[i, cols[i]])
        best = max(best, total)
    return best


def test_two_by_two_diagonal():
    matrix = np.array([[0.9, 0.1], [0.1, 0.9]])
    assert decode_assignment(matrix) == [(0, 0), (1, 1)]


def test_single_row_argmax():
    matrix = np.array([[0.2, 0.7, 0.1]])
    assert decode_assignment(matrix) == [(0, 1)]


def test_decode_is_injection():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n1 = int(rng.integers(1, 6))
        n2 = int(rng.integers(n1, 8))
        matrix = rng.uniform(size=(n1, n2))
        matching = decode_assignment(matrix)
        rows = [i for i, _ in matching]
        cols = [a for _, a in matching]
        assert rows == list(range(n1))
        assert len(set(cols)) == n1


@pytest.mark.parametrize("block", range(5))
def test_matches_brute_force_exactly(block):
    rng = np.random.default_rng(100 + block)
    for _ in range(200):
        n1 = int(rng.integers(1, 7))
        n2 = int(rng.integers(n1, 7))
        matrix = rng.uniform(size=(n1, n2))
        matching = decode_assignment(matrix)
        assert assignment_total(matrix, matching) == brute_force_best_total(matrix)


def test_tie_break_lowest_row_column():
    matrix = np.full((3, 3), 0.5)
    assert decode_assignment(matrix) == [(0, 0), (1, 1), (2, 2)]
    matrix = np.array([[0.5, 0.5, 0.1], [0.5, 0.5, 0.1], [0.1, 0.1, 0.9]])
    assert decode_assignment(matrix) == [(0, 0), (1, 1), (2, 2)]


def test_rejects_bad_shapes_and_values():
    with pytest.raises(ShapeError):
        decode_assignment(np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        decode_assignment(np.array([[1.5, 0.2]]))
    with pytest.raises(ShapeError):
        decode_assignment(np.zeros(4))


def test_argmax_decoder_for_ablation():
    matrix = np.array([[0.9, 0.8], [0.95, 0.1]])
    assert argmax_assignment(matrix) == [(0, 0), (1, 0)]  # may repeat columns
    assert decode_assignment(matrix) == [(0, 1), (1, 0)]  # hungarian does not
