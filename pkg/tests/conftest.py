from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from vrpower.synth import SynthConfig, generate


def normal_equation_solve(A, P) -> list[float]:
    """Exact solution of (A^T A) p = A^T P by Gauss-Jordan over rationals."""
    A = [[Fraction(float(x)) for x in row] for row in np.asarray(A)]
    P = [Fraction(float(x)) for x in np.asarray(P)]
    n, k = len(A), len(A[0])
    M = [[sum(A[r][i] * A[r][j] for r in range(n)) for j in range(k)]
         + [sum(A[r][i] * P[r] for r in range(n))] for i in range(k)]
    for col in range(k):
        piv = next(r for r in range(col, k) if M[r][col] != 0)
        M[col], M[piv] = M[piv], M[col]
        lead = M[col][col]
        M[col] = [x / lead for x in M[col]]
        for r in range(k):
            if r != col and M[r][col] != 0:
                factor = M[r][col]
                M[r] = [a - factor * b for a, b in zip(M[r], M[col])]
    return [float(M[i][k]) for i in range(k)]


@pytest.fixture(scope="session")
def clean_set():
    return generate(SynthConfig())


@pytest.fixture(scope="session")
def noisy_set():
    return generate(SynthConfig(noise_sigma=0.02, seed=7))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
