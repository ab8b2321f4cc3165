"""Two-state pouring controller and a simulated tilt-and-flow plant.

The plant tilts the source container toward 60 degrees while ``Pouring`` and
back to 0 otherwise, at a constant angular rate.  Liquid flows once the tilt
passes 30 degrees, linearly in tilt up to ``q_max`` (fill fraction per second)
at full tilt.  Inflow over a step is integrated exactly, so the plant does not
depend on the control period beyond when commands change.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

POUR_TILT = 60.0
FLOW_THRESHOLD = 30.0
# absorbs float drift so a level that reaches the stop threshold exactly latches
LEVEL_TOL = 1e-12


class ControlState(enum.Enum):
    NOT_POURING = "NotPouring"
    POURING = "Pouring"


@dataclass(frozen=True)
class ControllerConfig:
    l_target: float = 0.5
    epsilon: float = 0.01
    initial_pour_duration: float = 1.0
    loop_period: float = 0.1
    pour_tilt: float = POUR_TILT
    tilt_rate: float = 60.0  # degrees per second

    def __post_init__(self):
        if not 0.0 <= self.l_target <= 1.0:
            raise ValueError("l_target must lie in [0, 1]")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.loop_period <= 0 or self.tilt_rate <= 0:
            raise ValueError("loop_period and tilt_rate must be positive")


@dataclass(frozen=True)
class PlantState:
    fill: float = 0.0
    tilt: float = 0.0
    source_remaining: float = 1.0  # in units of target-cup volume
    q_max: float = 0.05


def controller_step(level_estimate: float, t: float, config: ControllerConfig, latched_stop: bool):
    """One control decision; returns ``(state, latched_stop)``."""
    if latched_stop:
        return ControlState.NOT_POURING, True
    if t < config.initial_pour_duration - 1e-9:
        return ControlState.POURING, False
    if level_estimate >= config.l_target - config.epsilon - LEVEL_TOL:
        return ControlState.NOT_POURING, True
    return ControlState.POURING, False


def _flow_integral(theta: float, pour_tilt: float) -> float:
    """Antiderivative in tilt of the normalised flow rate."""
    span = pour_tilt - FLOW_THRESHOLD
    if theta <= FLOW_THRESHOLD:
        return 0.0
    if theta <= pour_tilt:
        return (theta - FLOW_THRESHOLD) ** 2 / (2 * span)
    return span / 2 + (theta - pour_tilt)


def flow_fraction(theta: float, pour_tilt: float = POUR_TILT) -> float:
    return float(np.clip((theta - FLOW_THRESHOLD) / (pour_tilt - FLOW_THRESHOLD), 0.0, 1.0))


def plant_step(state: PlantState, cmd: ControlState, dt: float, *, tilt_rate: float = 60.0, pour_tilt: float = POUR_TILT) -> PlantState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    goal = pour_tilt if cmd is ControlState.POURING else 0.0
    theta0 = state.tilt
    if abs(goal - theta0) <= tilt_rate * dt:
        move_time, theta1 = abs(goal - theta0) / tilt_rate, goal
    else:
        move_time, theta1 = dt, theta0 + np.sign(goal - theta0) * tilt_rate * dt
    # exact time integral of the flow fraction: ramp part plus hold part
    if move_time > 0:
        ramp = (_flow_integral(theta1, pour_tilt) - _flow_integral(theta0, pour_tilt)) / (theta1 - theta0) * move_time
    else:
        ramp = 0.0
    hold = flow_fraction(theta1, pour_tilt) * (dt - move_time)
    inflow = state.q_max * (ramp + hold)
    inflow = min(inflow, state.source_remaining, 1.0 - state.fill)
    return replace(
        state,
        fill=min(state.fill + inflow, 1.0),
        tilt=float(theta1),
        source_remaining=state.source_remaining - inflow,
    )


@dataclass
class PourTrace:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    true_levels: list = field(default_factory=list)
    estimates: list = field(default_factory=list)
    l_target: float = 0.0
    l_initial: float = 0.0
    complete: bool = True
    config: dict = field(default_factory=dict)

    @property
    def final_level(self) -> float:
        return self.true_levels[-1]

    @property
    def final_error(self) -> float:
        return self.final_level - self.l_target

    def to_records(self) -> list[dict]:
        head = {
            "kind": "summary",
            "l_initial": self.l_initial,
            "l_target": self.l_target,
            "final_level": self.final_level,
            "final_error": self.final_error,
            "complete": self.complete,
            "config": self.config,
        }
        rows = [
            {"kind": "step", "t": round(t, 10), "state": s.value, "l_true": l, "l_hat": e}
            for t, s, l, e in zip(self.times, self.states, self.true_levels, self.estimates)
        ]
        return [head] + rows

    def write(self, path) -> None:
        with open(path, "w") as f:
            for rec in self.to_records():
                f.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "PourTrace":
        with open(path) as f:
            recs = [json.loads(line) for line in f if line.strip()]
        head, rows = recs[0], recs[1:]
        return cls(
            times=[r["t"] for r in rows],
            states=[ControlState(r["state"]) for r in rows],
            true_levels=[r["l_true"] for r in rows],
            estimates=[r["l_hat"] for r in rows],
            l_target=head["l_target"],
            l_initial=head["l_initial"],
            complete=head["complete"],
            config=head["config"],
        )


# Perception maps (true plant state, time, rng) -> estimated fill level.
Perception = Callable[[PlantState, float, np.random.Generator], float]


def oracle_perception(state: PlantState, t: float, rng) -> float:
    return state.fill


def rendered_perception(model, layout, kernel: int = 5) -> Perception:
    """Perceive the level by rendering the transparent cup and segmenting it.

    ``layout`` is a :class:`~liquidseg.synth.SceneSpec` fixing camera, cup and
    background; each call renders it at the plant's true fill with fresh noise.
    """
    from .postprocess import estimate_fill
    from .segmentation import predict_mask
    from .synth import render_scene

    def perceive(state: PlantState, t: float, rng) -> float:
        spec = replace(layout, fill_fraction=float(np.clip(state.fill, 0.0, 1.0)), seed=int(rng.integers(2**31)))
        img, _, cup_box = render_scene(spec, "transparent")
        return estimate_fill(predict_mask(model, img), cup_box, kernel).level

    return perceive


WARMUP_SECONDS = 2.0


def simulate_pour(
    config: ControllerConfig,
    l_initial: float = 0.0,
    *,
    q_max: float = 0.05,
    source_volume: float = 1.0,
    perception: Optional[Perception] = None,
    warmup: float = WARMUP_SECONDS,
    seed: int = 0,
    max_time: float = 120.0,
) -> PourTrace:
    """Closed-loop pour until the controller has latched and the tilt is back at 0.

    A non-oracle ``perception`` is bypassed (replaced by the true level) for
    the first ``warmup`` seconds.
    """
    rng = np.random.default_rng(seed)
    plant = PlantState(fill=l_initial, source_remaining=source_volume, q_max=q_max)
    trace = PourTrace(
        l_target=config.l_target,
        l_initial=l_initial,
        config={**asdict(config), "q_max": q_max, "source_volume": source_volume, "seed": seed},
    )
    latched = False
    step = 0
    while True:
        t = step * config.loop_period
        if perception is None or t < warmup:
            estimate = plant.fill
        else:
            estimate = float(perception(plant, t, rng))
        cmd, latched = controller_step(estimate, t, config, latched)
        trace.times.append(t)
        trace.states.append(cmd)
        trace.true_levels.append(plant.fill)
        trace.estimates.append(estimate)
        if latched and plant.tilt == 0.0:
            break
        if plant.source_remaining <= 1e-12 and not latched:
            trace.complete = False
            break
        if t > max_time:
            trace.complete = False
            break
        plant = plant_step(plant, cmd, config.loop_period, tilt_rate=config.tilt_rate, pour_tilt=config.pour_tilt)
        step += 1
    return trace
