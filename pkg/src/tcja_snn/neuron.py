"""Leaky integrate-and-fire dynamics with surrogate-gradient spiking.

The membrane update per step is

    V_t = H_{t-1} + (1/tau) * (I_{t-1} - (H_{t-1} - v_reset))
    S_t = step(V_t - v_threshold)          (1 at or above threshold)
    H_t = V_t * (1 - S_t)                  (hard reset to zero on spike)

with the input array enumerated as the I_{t-1} sequence for t = 1..T, so
spike k answers input frame k. The forward step function is exact 0/1;
only the backward pass substitutes a smooth derivative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor, stack

_SURROGATES = ("atan", "triangle")


@dataclass(frozen=True)
class LifConfig:
    """Neuron constants shared by every unit of a spiking layer.

    `strict_eq2` records the timing convention: when true, the input
    sequence is read as the previous-tick currents of the membrane
    recurrence above. The common convention of indexing inputs by the
    same tick as the membrane yields bit-identical trajectories for
    fresh-state sequences (pure relabeling), so this flag exists for
    documentation and config compatibility rather than arithmetic.
    """

    tau: float = 2.0
    v_reset: float = 0.0
    v_threshold: float = 1.0
    surrogate: str = "atan"
    alpha: float = 2.0
    gamma: float = 1.0
    detach_reset: bool = True
    strict_eq2: bool = True

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.v_threshold <= self.v_reset:
            raise ValueError(
                f"v_threshold ({self.v_threshold}) must exceed v_reset ({self.v_reset})"
            )
        if self.surrogate not in _SURROGATES:
            raise ValueError(f"surrogate must be one of {_SURROGATES}, got {self.surrogate!r}")


@dataclass
class LifState:
    """Post-reset membrane potential carried between steps of one sequence."""

    h: Tensor


@dataclass
class LifTrace:
    """Recorded per-step membrane and spike values (forward copies)."""

    v: list[np.ndarray] = field(default_factory=list)
    s: list[np.ndarray] = field(default_factory=list)
    h: list[np.ndarray] = field(default_factory=list)


def surrogate_derivative(x: np.ndarray, cfg: LifConfig) -> np.ndarray:
    """Closed-form smooth derivative used in place of the step function's."""
    if cfg.surrogate == "atan":
        return cfg.alpha / (2.0 * (1.0 + (np.pi / 2.0 * cfg.alpha * x) ** 2))
    return (1.0 / cfg.gamma**2) * np.maximum(0.0, cfg.gamma - np.abs(x - 1.0))


def heaviside_surrogate(x: Tensor, cfg: LifConfig) -> Tensor:
    """Step function forward (1 at x >= 0), surrogate derivative backward."""
    data = (x.data >= 0).astype(x.data.dtype)
    src = x

    def backward(g: np.ndarray) -> None:
        src._accumulate(g * surrogate_derivative(src.data, cfg).astype(g.dtype))

    return Tensor._node(data, (src,), backward)


def lif_init(shape: tuple[int, ...], cfg: LifConfig, dtype=np.float64) -> LifState:
    """Fresh state at the reset potential; used at every sequence start."""
    return LifState(h=Tensor(np.full(shape, cfg.v_reset, dtype=dtype)))


def _lif_update(
    state: LifState, input_current: Tensor, cfg: LifConfig
) -> tuple[Tensor, Tensor, LifState]:
    if state.h.shape != input_current.shape:
        raise ShapeError(
            f"state shape {state.h.shape} does not match input {input_current.shape}"
        )
    h = state.h
    v = h + (input_current - (h - cfg.v_reset)) * (1.0 / cfg.tau)
    spikes = heaviside_surrogate(v - cfg.v_threshold, cfg)
    keep = 1.0 - (spikes.detach() if cfg.detach_reset else spikes)
    return v, spikes, LifState(h=v * keep)


def lif_step(
    state: LifState, input_current: Tensor, cfg: LifConfig
) -> tuple[Tensor, LifState]:
    """One membrane update; returns binary spikes and the post-reset state."""
    _, spikes, new_state = _lif_update(state, input_current, cfg)
    return spikes, new_state


def lif_sequence(
    inputs: Tensor, cfg: LifConfig, trace: LifTrace | None = None
) -> Tensor:
    """Unroll the neuron over the leading time axis with fresh state.

    `inputs` is (T, ...); the output has the same shape and holds the
    spike train. State never carries across separate calls.
    """
    if inputs.ndim < 1 or inputs.shape[0] < 1:
        raise ShapeError(f"empty time dimension in input of shape {inputs.shape}")
    t_steps = inputs.shape[0]
    state = lif_init(inputs.shape[1:], cfg, dtype=inputs.dtype)
    outputs = []
    for t in range(t_steps):
        current = inputs.take0(t)
        v, spikes, new_state = _lif_update(state, current, cfg)
        if trace is not None:
            trace.v.append(v.data.copy())
            trace.s.append(spikes.data.copy())
            trace.h.append(new_state.h.data.copy())
        state = new_state
        outputs.append(spikes)
    return stack(outputs)
