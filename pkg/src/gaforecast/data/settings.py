"""Named experiment protocols (history/future windows and mode count)."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

from ..errors import ConfigurationError


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ExperimentSetting:
    name: str
    history_seconds: float
    history_rate: float
    future_seconds: float
    future_rate: float
    k: int
    base_rate: float = 1.0
    history_steps_override: Optional[int] = None
    future_steps_override: Optional[int] = None

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError("k must be at least 1")
        for label in ("history_rate", "future_rate", "base_rate"):
            if getattr(self, label) <= 0:
                raise ConfigurationError(f"{label} must be positive")
        self._stride(self.history_rate)
        self._stride(self.future_rate)

    @property
    def history_steps(self) -> int:
        if self.history_steps_override is not None:
            return int(self.history_steps_override)
        return max(2, _round_half_up(self.history_seconds * self.history_rate))

    @property
    def future_steps(self) -> int:
        if self.future_steps_override is not None:
            return int(self.future_steps_override)
        return max(1, _round_half_up(self.future_seconds * self.future_rate))

    def _stride(self, rate: float) -> int:
        ratio = self.base_rate / rate
        n = round(ratio)
        if n < 1 or abs(ratio - n) > 1e-9:
            raise ConfigurationError(
                f"rate {rate} Hz is not an integer divisor of the base rate {self.base_rate} Hz"
            )
        return int(n)

    @property
    def history_stride(self) -> int:
        """Base-rate steps between consecutive history points."""
        return self._stride(self.history_rate)

    @property
    def future_stride(self) -> int:
        return self._stride(self.future_rate)

    @property
    def dt_history(self) -> float:
        return 1.0 / self.history_rate

    @property
    def dt_future(self) -> float:
        return 1.0 / self.future_rate

    @property
    def span(self) -> int:
        """Number of base-rate steps covered by one window, inclusive."""
        return (self.history_steps - 1) * self.history_stride + self.future_steps * self.future_stride + 1

    def to_dict(self) -> dict:
        return asdict(self)


SETTINGS = {
    "trajair-11s": ExperimentSetting("trajair-11s", 11.0, 1.0, 120.0, 0.1, 5),
    "atp-16s": ExperimentSetting("atp-16s", 16.0, 0.2, 120.0, 0.2, 5),
    "goodflight-40s": ExperimentSetting("goodflight-40s", 40.0, 1.0, 120.0, 0.1, 20),
}


def get_setting(name: str) -> ExperimentSetting:
    try:
        return SETTINGS[name]
    except KeyError:
        raise ConfigurationError(f"unknown setting {name!r}; known: {sorted(SETTINGS)}") from None
