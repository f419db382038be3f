"""Per-epoch learning-rate decisions driven by mutual information.

Two dynamic policies are provided:

* **change** (``policy1_step``): the relative change of the output-layer
  MI, ``delta = |I[t-1] - I[t-2]| / I[t-1]``, raises the LR by
  ``gamma1 * delta`` while it exceeds ``epsilon`` and lowers it by
  ``gamma2 * delta`` once it has saturated.
* **change-value** (``policy2_step``): additionally tracks the distance to
  the reference ``IXY`` through ``d1 = 1 - I[t-1] / IXY``. While ``d1 > 0``
  the LR moves by ``+gamma1 * d1`` (still changing) or ``-gamma2 * d1``
  (saturated); once the output MI reaches or exceeds the reference the LR
  moves by ``gamma3 * d1``, which is a decrease.

Step functions are pure: they read a :class:`SchedulerState` and return an
:class:`LrDecision`. :func:`observe` and :func:`advance` build the next state.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

# Negative MI estimates are replaced by this before any ratio is formed.
MI_FLOOR = 1e-12


class Branch(str, enum.Enum):
    WARM_HOLD = "warm-hold"
    DEGENERATE_HOLD = "degenerate-hold"
    INCREASE = "increase-on-change"
    DECREASE_SATURATION = "decrease-on-saturation"
    DECREASE_VIOLATION = "decrease-on-violation"
    # d1 <= 0 and d2 <= epsilon: same update as DECREASE_VIOLATION
    DECREASE_VIOLATION_SATURATED = "decrease-on-violation-saturated"
    FIXED = "fixed"
    WARMUP = "warmup"
    DECAY = "decay"


@dataclass(frozen=True)
class PolicyConstants:
    lr_min: float
    lr_max: float
    epsilon: float = 0.01
    gamma1: float = 0.1
    gamma2: float = 0.1
    gamma3: float = 0.1

    def __post_init__(self):
        if not 0 < self.lr_min <= self.lr_max:
            raise ValueError(f"need 0 < lr_min <= lr_max, got [{self.lr_min}, {self.lr_max}]")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        for name in ("gamma1", "gamma2", "gamma3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


# Step sizes and saturation threshold per (policy, dataset).
PRESETS = {
    ("change", "mnist"): dict(gamma1=0.1, gamma2=1.0, gamma3=0.1, epsilon=0.01),
    ("change", "cifar10"): dict(gamma1=0.003, gamma2=0.003, gamma3=0.1, epsilon=0.01),
    ("change-value", "mnist"): dict(gamma1=0.1, gamma2=0.1, gamma3=0.1, epsilon=0.01),
    ("change-value", "cifar10"): dict(gamma1=0.001, gamma2=0.001, gamma3=0.1, epsilon=0.01),
}


def default_constants(policy: str, dataset: str, desired_lr: float, **overrides) -> PolicyConstants:
    """Preset constants with bounds one decade either side of ``desired_lr``."""
    values = dict(PRESETS[(policy, dataset)])
    values.update(lr_min=desired_lr / 10.0, lr_max=desired_lr * 10.0)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return PolicyConstants(**values)


@dataclass(frozen=True)
class SchedulerState:
    lr: float
    ihyll_history: tuple[float, ...] = ()
    ixy: float | None = None
    epoch: int = 0
    value_only_window: int = 0


@dataclass(frozen=True)
class LrDecision:
    lr_next: float
    branch: Branch
    clamp: str = ""  # "min" or "max" when a bound was hit
    delta: float = math.nan  # relative change (d2 for the change-value policy)
    d1: float = math.nan
    value_only: bool = False


@dataclass(frozen=True)
class _Signal:
    last: float
    prev: float
    change: float


def initial_state(constants: PolicyConstants, ixy: float | None = None) -> SchedulerState:
    return SchedulerState(lr=constants.lr_min, ixy=ixy)


def observe(state: SchedulerState, ihyll: float) -> SchedulerState:
    """Append a new MI measurement, keeping the two most recent."""
    return replace(state, ihyll_history=(state.ihyll_history + (float(ihyll),))[-2:])


def advance(state: SchedulerState, decision: LrDecision) -> SchedulerState:
    window = state.value_only_window
    if decision.value_only and window > 0:
        window -= 1
    return replace(state, lr=decision.lr_next, epoch=state.epoch + 1, value_only_window=window)


def _floor(v: float) -> float:
    return MI_FLOOR if v < 0 else v


def _signal(state: SchedulerState) -> _Signal | None:
    prev, last = (_floor(v) for v in state.ihyll_history[-2:])
    if last == 0:
        return None
    return _Signal(last=last, prev=prev, change=abs(last - prev) / last)


def _hold(state: SchedulerState, c: PolicyConstants, branch: Branch, **kw) -> LrDecision:
    return LrDecision(lr_next=min(c.lr_max, max(c.lr_min, state.lr)), branch=branch, **kw)


def _up(lr: float, step: float, c: PolicyConstants, branch: Branch, **kw) -> LrDecision:
    raw = lr + step
    nxt = min(c.lr_max, raw)
    return LrDecision(nxt, branch, clamp="max" if raw > c.lr_max else "", **kw)


def _down(lr: float, step: float, c: PolicyConstants, branch: Branch, **kw) -> LrDecision:
    # step is added, so callers pass a non-positive value
    raw = lr + step
    nxt = max(c.lr_min, raw)
    return LrDecision(nxt, branch, clamp="min" if raw < c.lr_min else "", **kw)


def policy1_step(state: SchedulerState, c: PolicyConstants) -> LrDecision:
    """LR from the relative change of output-layer MI alone."""
    if len(state.ihyll_history) < 2:
        return LrDecision(c.lr_min, Branch.WARM_HOLD)
    sig = _signal(state)
    if sig is None:
        return _hold(state, c, Branch.DEGENERATE_HOLD)
    delta = sig.change
    if delta > c.epsilon:
        return _up(state.lr, c.gamma1 * delta, c, Branch.INCREASE, delta=delta)
    return _down(state.lr, -(c.gamma2 * delta), c, Branch.DECREASE_SATURATION, delta=delta)


def _reference_gap(state: SchedulerState, sig: _Signal) -> float | None:
    if state.ixy is None or not state.ixy > 0:
        return None
    return 1.0 - sig.last / state.ixy


def policy2_step(state: SchedulerState, c: PolicyConstants) -> LrDecision:
    """LR from the change of output-layer MI and its value relative to IXY."""
    if len(state.ihyll_history) < 2:
        return LrDecision(c.lr_min, Branch.WARM_HOLD)
    sig = _signal(state)
    d1 = None if sig is None else _reference_gap(state, sig)
    if d1 is None:
        return _hold(state, c, Branch.DEGENERATE_HOLD)
    d2 = sig.change
    kw = dict(delta=d2, d1=d1)
    if d1 > 0:
        if d2 > c.epsilon:
            return _up(state.lr, c.gamma1 * d1, c, Branch.INCREASE, **kw)
        return _down(state.lr, -(c.gamma2 * d1), c, Branch.DECREASE_SATURATION, **kw)
    branch = Branch.DECREASE_VIOLATION if d2 > c.epsilon else Branch.DECREASE_VIOLATION_SATURATED
    return _down(state.lr, c.gamma3 * d1, c, branch, **kw)


def bs_change_step(state: SchedulerState, c: PolicyConstants) -> LrDecision:
    """Change-value policy with the saturation test switched off.

    Used for a few epochs after a batch-size change so the LR can grow again
    while the output MI is below the reference. A reference violation still
    lowers the LR. Needs only the latest measurement.
    """
    if state.value_only_window <= 0:
        raise ValueError("bs_change_step needs a positive value_only_window")
    if not state.ihyll_history:
        return LrDecision(c.lr_min, Branch.WARM_HOLD, value_only=True)
    last = _floor(state.ihyll_history[-1])
    if last == 0 or state.ixy is None or not state.ixy > 0:
        return _hold(state, c, Branch.DEGENERATE_HOLD, value_only=True)
    d1 = 1.0 - last / state.ixy
    d2 = math.nan
    if len(state.ihyll_history) == 2:
        d2 = abs(last - _floor(state.ihyll_history[0])) / last
    kw = dict(delta=d2, d1=d1, value_only=True)
    if d1 > 0:
        return _up(state.lr, c.gamma1 * d1, c, Branch.INCREASE, **kw)
    return _down(state.lr, c.gamma3 * d1, c, Branch.DECREASE_VIOLATION, **kw)


def change_value_step(state: SchedulerState, c: PolicyConstants) -> LrDecision:
    """Dispatch to the value-only mode while its window is open."""
    if state.value_only_window > 0:
        return bs_change_step(state, c)
    return policy2_step(state, c)


def layerwise_step(states, ihy_per_layer, c: PolicyConstants) -> list[LrDecision]:
    """One change-value decision per layer, each using that layer's own IHY.

    ``states`` hold each layer's history before this epoch's measurement;
    ``ihy_per_layer`` is the new measurement for each layer.
    """
    states = list(states)
    ihy_per_layer = list(ihy_per_layer)
    if len(states) != len(ihy_per_layer):
        raise ValueError(f"{len(states)} layer states but {len(ihy_per_layer)} IHY values")
    return [change_value_step(observe(s, v), c) for s, v in zip(states, ihy_per_layer)]


def baseline_fixed(lr0: float, epoch: int = 0) -> LrDecision:
    return LrDecision(lr0, Branch.FIXED)


def baseline_warmup(lr0: float, lr_target: float, warmup_epochs: int, epoch: int) -> LrDecision:
    """Linear ramp from ``lr0`` at epoch 0 to ``lr_target`` at ``warmup_epochs``."""
    if warmup_epochs < 1:
        raise ValueError("warmup_epochs must be >= 1")
    if epoch >= warmup_epochs:
        return LrDecision(lr_target, Branch.WARMUP)
    frac = epoch / warmup_epochs
    return LrDecision(lr0 * (1.0 - frac) + lr_target * frac, Branch.WARMUP)


def baseline_decay(lr0: float, decay_rate: float, epoch: int) -> LrDecision:
    """Exponential decay ``lr0 * decay_rate**epoch``."""
    if not 0 < decay_rate <= 1:
        raise ValueError("decay_rate must lie in (0, 1]")
    return LrDecision(lr0 * decay_rate**epoch, Branch.DECAY)


def replay(prev_lr: float, decision: LrDecision, c: PolicyConstants, policy: str) -> float:
    """Recompute ``lr_next`` from a logged branch and its signal values."""
    b = decision.branch
    if b is Branch.WARM_HOLD:
        return c.lr_min
    if b is Branch.DEGENERATE_HOLD:
        return min(c.lr_max, max(c.lr_min, prev_lr))
    x = decision.delta if policy == "change" else decision.d1
    if b is Branch.INCREASE:
        return min(c.lr_max, prev_lr + c.gamma1 * x)
    if b is Branch.DECREASE_SATURATION:
        return max(c.lr_min, prev_lr + -(c.gamma2 * x))
    if b in (Branch.DECREASE_VIOLATION, Branch.DECREASE_VIOLATION_SATURATED):
        return max(c.lr_min, prev_lr + c.gamma3 * x)
    raise ValueError(f"cannot replay branch {b}")
