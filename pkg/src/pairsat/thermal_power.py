"""Lumped thermal model of the optical housing and the electrical power ledger.

One thermal node with Newton coupling to the environment, heated by a
bang-bang heater and by the dissipation of whichever electronics are
active. The power ledger enforces the 2 W bus budget at all times.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

# electrical draws per module, watts
MODULE_DRAWS_W = {
    "apds": 0.5,
    "laser_driver": 0.45,
    "controller_and_memory": 0.3,
    "liquid_crystal": 0.05,
}

HEATER_CAP_OPERATING_W = 0.7
HEATER_CAP_IDLE_W = 1.7
POWER_BUDGET_W = 2.0

HEATER_ON_BELOW_C = 20.0
HEATER_OFF_ABOVE_C = 22.0

# share of each module's draw that heats the optical housing node; the
# controller board and most of the laser driver dump heat elsewhere
DEFAULT_DISSIPATION_W = {
    "apds": 0.15,
    "laser_driver": 0.10,
    "controller_and_memory": 0.0,
    "liquid_crystal": 0.05,
}


class BudgetError(Exception):
    """Total electrical draw exceeded the bus budget."""


@dataclass
class ThermalParams:
    heat_capacity_j_per_c: float = 225.0
    conductance_w_per_c: float = 0.05
    dissipation_map: dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_DISSIPATION_W)
    )

    def __post_init__(self) -> None:
        if self.heat_capacity_j_per_c <= 0 or self.conductance_w_per_c <= 0:
            raise ValueError("heat capacity and conductance must be positive")


@dataclass
class ThermalState:
    housing_temp_c: float
    heater_watts: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.heater_watts <= HEATER_CAP_IDLE_W:
            raise ValueError("heater_watts outside [0, idle cap]")


def internal_dissipation(params: ThermalParams, active: Iterable[str]) -> float:
    return sum(params.dissipation_map.get(m, 0.0) for m in active)


def step_thermal(
    params: ThermalParams,
    state: ThermalState,
    external_temp_c: float,
    dt: float,
    active: Iterable[str] = (),
) -> ThermalState:
    """One explicit Euler step of the housing node."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    flow = (
        state.heater_watts
        + internal_dissipation(params, active)
        - params.conductance_w_per_c * (state.housing_temp_c - external_temp_c)
    )
    temp = state.housing_temp_c + dt * flow / params.heat_capacity_j_per_c
    return ThermalState(housing_temp_c=temp, heater_watts=state.heater_watts)


def heater_cap(mode: str) -> float:
    if mode == "operating":
        return HEATER_CAP_OPERATING_W
    if mode == "idle":
        return HEATER_CAP_IDLE_W
    raise ValueError(f"unknown heater mode {mode!r}")


def heater_command(housing_temp_c: float, mode: str, previous_watts: float = 0.0) -> float:
    """Bang-bang heater with hysteresis.

    Full allowed power below the lower threshold, zero above the upper one,
    and the previous on/off decision held in between (re-capped if the mode
    changed).
    """
    cap = heater_cap(mode)
    if housing_temp_c < HEATER_ON_BELOW_C:
        return cap
    if housing_temp_c > HEATER_OFF_ABOVE_C:
        return 0.0
    return cap if previous_watts > 0.0 else 0.0


@dataclass
class PowerLedger:
    draws_w: dict[str, float] = field(default_factory=lambda: dict(MODULE_DRAWS_W))
    budget_w: float = POWER_BUDGET_W


def total_power(
    ledger: PowerLedger,
    active: Iterable[str],
    heater_watts: float,
    mode: str | None = None,
) -> float:
    """Exact sum of active module draws plus heater power.

    Raises BudgetError beyond the 2 W budget; exactly 2.0 W is allowed.
    """
    if heater_watts < 0:
        raise ValueError("heater_watts must be nonnegative")
    if mode is not None and heater_watts > heater_cap(mode) + 1e-12:
        raise ValueError(f"heater {heater_watts} W exceeds the {mode} cap")
    total = heater_watts
    for m in active:
        try:
            total += ledger.draws_w[m]
        except KeyError:
            raise ValueError(f"unknown module {m!r} in active set") from None
    if total > ledger.budget_w + 1e-9:
        raise BudgetError(f"total draw {total:.3f} W exceeds {ledger.budget_w} W budget")
    return total
