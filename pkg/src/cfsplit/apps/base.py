"""Problem instances and shared helpers for the application builders."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..core import FixedPointOperator
from ..execution import IndexRule, Stop, run_sequential


@dataclass
class ProblemInstance:
    """A built application: operator wiring plus evaluators.

    ``operator`` is the coordinate-mode operator; ``full_operator`` (when
    different) is the one used for full updates. ``oracle`` returns a
    reference solution at desk scale.
    """

    name: str
    dims: dict
    operator: FixedPointOperator
    x0: np.ndarray
    objective: Callable
    oracle: Callable | None = None
    full_operator: FixedPointOperator | None = None
    tol: float = 1e-6
    extras: dict = field(default_factory=dict)
    unpack: Callable | None = None

    @property
    def full(self) -> FixedPointOperator:
        return self.full_operator or self.operator

    def solution(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self.unpack(z) if self.unpack is not None else self.operator.solution(z)


def fixed_point_reference(op: FixedPointOperator, x0, tol: float = 1e-12, max_iter: int = 200000):
    """High-accuracy full-update run; returns the final iterate."""
    x = np.array(x0, dtype=float)
    for _ in range(max_iter):
        y = op.apply_full(x)
        if np.linalg.norm(x - y) <= tol * (1.0 + np.linalg.norm(x)):
            return y
        x = y
    raise RuntimeError("reference run did not reach the requested accuracy")


def coordinate_run(inst: ProblemInstance, rule: str = "random", epochs: float = 100, tol: float = 1e-10,
                   eta=1.0, seed: int = 0, x0=None):
    op = inst.operator
    return run_sequential(op, IndexRule(rule, op.m, seed=seed), eta, Stop(epochs, tol),
                          inst.x0 if x0 is None else x0)


def as_dense(A) -> np.ndarray:
    return A.toarray() if hasattr(A, "toarray") else np.asarray(A, dtype=float)
