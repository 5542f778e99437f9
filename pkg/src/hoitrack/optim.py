"""Adam with per-group learning rates, a moving-average convergence rule and
a gradient provider mixing analytic gradients with central finite differences."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import LengthMismatch, NonFiniteGradient, NonFiniteLoss

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8
DEFAULT_CONV_TOL = 1e-4
DEFAULT_WINDOW = 10

FD_STEP_ROTATION = 1e-4  # rad (tangent)
FD_STEP_TRANSLATION = 1e-4  # m
FD_STEP_LOG_SCALE = 1e-3


@dataclass
class ParamGroup:
    name: str
    values: np.ndarray
    learning_rate: float
    fd_step: float = FD_STEP_TRANSLATION
    # Optional analytic gradient: called with the full list of group values,
    # returns the gradient for this group. When None, central differences of
    # the loss are used.
    grad_fn: Callable[[list[np.ndarray]], np.ndarray] | None = None

    def __post_init__(self):
        self.values = np.atleast_1d(np.asarray(self.values, dtype=np.float64)).copy()
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite parameter values")


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @staticmethod
    def zeros(n: int) -> "AdamState":
        return AdamState(np.zeros(n), np.zeros(n))


def adam_step(state: AdamState, group: ParamGroup, grad: np.ndarray) -> np.ndarray:
    """Standard bias-corrected Adam update; returns the new values."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != group.values.shape:
        raise LengthMismatch(
            f"gradient shape {grad.shape} vs values {group.values.shape}"
        )
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient(f"group {group.name!r}")
    state.step_count += 1
    state.first_moment = BETA1 * state.first_moment + (1 - BETA1) * grad
    state.second_moment = BETA2 * state.second_moment + (1 - BETA2) * grad**2
    m_hat = state.first_moment / (1 - BETA1**state.step_count)
    v_hat = state.second_moment / (1 - BETA2**state.step_count)
    group.values = group.values - group.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return group.values


def finite_difference_grad(
    loss_fn: Callable[[list[np.ndarray]], float],
    values: list[np.ndarray],
    group_index: int,
    step: float,
) -> np.ndarray:
    """Central differences of loss_fn w.r.t. one group's coordinates."""
    base = values[group_index]
    grad = np.empty_like(base)
    for i in range(len(base)):
        vp = [v.copy() for v in values]
        vm = [v.copy() for v in values]
        vp[group_index][i] += step
        vm[group_index][i] -= step
        grad[i] = (loss_fn(vp) - loss_fn(vm)) / (2 * step)
    return grad


@dataclass
class OptimizeResult:
    values: list[np.ndarray]
    iterations: int
    final_loss: float
    converged: bool
    loss_history: list = field(default_factory=list)


def optimize(
    loss_fn: Callable[[list[np.ndarray]], float],
    groups: Sequence[ParamGroup],
    max_iters: int,
    conv_tol: float = DEFAULT_CONV_TOL,
    window: int = DEFAULT_WINDOW,
) -> OptimizeResult:
    """Run Adam until the moving average of parameter-change norms drops
    below conv_tol (never before `window` steps) or max_iters is reached."""
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    states = [AdamState.zeros(len(g.values)) for g in groups]
    deltas: list[float] = []
    losses: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        values = [g.values for g in groups]
        loss = loss_fn([v.copy() for v in values])
        if not np.isfinite(loss):
            raise NonFiniteLoss(
                f"iteration {it}: loss={loss}; "
                + ", ".join(f"{g.name}={g.values.tolist()}" for g in groups)
            )
        losses.append(float(loss))
        step_sq = 0.0
        for gi, (g, st) in enumerate(zip(groups, states)):
            if g.grad_fn is not None:
                grad = np.asarray(g.grad_fn([v.copy() for v in values]), dtype=np.float64)
                if not np.all(np.isfinite(grad)):
                    raise NonFiniteGradient(f"group {g.name!r} (analytic)")
            else:
                grad = finite_difference_grad(loss_fn, [v.copy() for v in values], gi, g.fd_step)
            old = g.values.copy()
            adam_step(st, g, grad)
            step_sq += float(np.sum((g.values - old) ** 2))
        deltas.append(np.sqrt(step_sq))
        if len(deltas) >= window and float(np.mean(deltas[-window:])) < conv_tol:
            converged = True
            break
    final_loss = loss_fn([g.values.copy() for g in groups])
    return OptimizeResult(
        values=[g.values.copy() for g in groups],
        iterations=it,
        final_loss=float(final_loss),
        converged=converged,
        loss_history=losses,
    )
