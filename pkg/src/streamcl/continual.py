"""Diagonal Fisher information and quadratic consolidation penalties.

Parameters are always the flat vector of :class:`streamcl.nn.MLP`; Fisher
diagonals and anchors are aligned with it element by element, biases
included.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import nn
from .errors import PenaltyBeforeConsolidationError


@dataclass(frozen=True)
class FisherDiagonal:
    values: np.ndarray
    sample_count: int

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be positive")
        if np.any(self.values < 0):
            raise ValueError("Fisher entries must be non-negative")


def estimate_fisher_diagonal(net: nn.MLP, x, y=None, chunk: int = 4096) -> FisherDiagonal:
    """Empirical diagonal Fisher of a unit-variance Gaussian likelihood.

    Each entry is the mean over samples of the squared per-sample gradient of
    ``0.5 * ||y_n - net(x_n)||^2``, evaluated without dropout. ``y=None`` uses
    the inputs as targets (autoencoders).

    The per-sample gradient of a weight ``W[i, j]`` factorises as
    ``a_i * delta_j``, so its square summed over samples is
    ``(a**2).T @ (delta**2)`` and no per-sample gradient vector is stored.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    n = x.shape[0]
    if n == 0:
        raise ValueError("cannot estimate Fisher information on an empty dataset")
    target = x if y is None else np.asarray(y, dtype=np.float64).reshape(n, -1)
    acc = np.zeros(net.n_params)
    for start in range(0, n, chunk):
        xb, tb = x[start:start + chunk], target[start:start + chunk]
        trace = nn._run(net, xb, False, None, keep=True)
        for i, a_in, delta in nn._backprop(net, trace, trace.output - tb):
            w_sl, b_sl = net.param_slices(i)
            d2 = delta * delta
            acc[w_sl] += ((a_in * a_in).T @ d2).ravel()
            if b_sl is not None:
                acc[b_sl] += d2.sum(axis=0)
    return FisherDiagonal(acc / n, n)


@dataclass
class ConsolidationState:
    """Running Fisher accumulator and anchor of Online-EWC.

    ``rule="online"`` accumulates ``F~ <- gamma * F~ + F``; ``rule="ewcpp"``
    mixes ``F~ <- gamma * F~ + (1 - gamma) * F`` instead. Either way the first
    consolidation stores ``F`` unchanged.
    """

    n_params: int
    gamma: float = 0.9
    lam: float = 200.0
    rule: str = "online"
    fisher: np.ndarray = None
    anchor: np.ndarray = None
    update_count: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.rule not in ("online", "ewcpp"):
            raise ValueError(f"unknown consolidation rule {self.rule!r}")
        if self.fisher is None:
            self.fisher = np.zeros(self.n_params)
        if self.anchor is None:
            self.anchor = np.zeros(self.n_params)

    def penalty(self, params: np.ndarray):
        """Penalty hook for :func:`streamcl.nn.train`."""
        return ewc_penalty(params, self)


def consolidate(state: ConsolidationState, new_fisher: FisherDiagonal,
                new_anchor: np.ndarray) -> ConsolidationState:
    f = np.asarray(new_fisher.values, dtype=np.float64)
    anchor = np.asarray(new_anchor, dtype=np.float64)
    if f.shape != (state.n_params,) or anchor.shape != (state.n_params,):
        raise ValueError("Fisher diagonal and anchor must align with the parameter vector")
    if state.update_count == 0:
        acc = f.copy()
    elif state.rule == "online":
        acc = state.gamma * state.fisher + f
    else:
        acc = state.gamma * state.fisher + (1.0 - state.gamma) * f
    return replace(state, fisher=acc, anchor=anchor.copy(), update_count=state.update_count + 1)


def _check_aligned(params, n):
    if params.shape != (n,):
        raise ValueError(f"expected {n} parameters, got shape {params.shape}")


def ewc_penalty(params: np.ndarray, state: ConsolidationState):
    """``0.5 * lam * sum(F~ * (theta - theta*)**2)`` and its gradient."""
    if state.update_count == 0:
        raise PenaltyBeforeConsolidationError(
            "no Fisher information consolidated yet; train without a penalty")
    params = np.asarray(params, dtype=np.float64)
    _check_aligned(params, state.n_params)
    diff = params - state.anchor
    weighted = state.lam * state.fisher * diff
    return 0.5 * float(np.dot(weighted, diff)), weighted


@dataclass
class EwcHistory:
    """Every Fisher diagonal, anchor and weight kept by plain (multi-penalty) EWC."""

    fishers: list = field(default_factory=list)
    anchors: list = field(default_factory=list)
    lams: list = field(default_factory=list)

    def append(self, fisher: FisherDiagonal, anchor: np.ndarray, lam: float) -> None:
        self.fishers.append(fisher)
        self.anchors.append(np.array(anchor, dtype=np.float64))
        self.lams.append(float(lam))

    def __len__(self):
        return len(self.fishers)


def ewc_penalty_multi(params: np.ndarray, history: EwcHistory, lambda_prior: float = 0.0):
    """``0.5 * sum((sum_t lam_t F_t + lambda_prior) * (theta - theta*_last)**2)``.

    Anchored at the most recent stored optimum.
    """
    if len(history) == 0:
        raise PenaltyBeforeConsolidationError("EWC history is empty")
    params = np.asarray(params, dtype=np.float64)
    _check_aligned(params, history.anchors[-1].shape[0])
    precision = np.full(params.shape, float(lambda_prior))
    for f, lam in zip(history.fishers, history.lams):
        precision += lam * f.values
    diff = params - history.anchors[-1]
    weighted = precision * diff
    return 0.5 * float(np.dot(weighted, diff)), weighted


def multi_penalty_hook(history: EwcHistory, lambda_prior: float = 0.0) -> nn.PenaltyHook:
    return lambda params: ewc_penalty_multi(params, history, lambda_prior)
