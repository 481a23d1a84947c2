from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

ROLES = (
    "gen_initial",
    "gen_nested_initial",
    "gen_layer",
    "check_complexity",
    "evaluate",
    "select_final",
)
DEFAULT_MODEL = "gpt-4o-mini"


@dataclass(frozen=True)
class AgotConfig:
    """Bounds and sampling settings for one engine run.

    Defaults are depth 1, three layers, three nodes per layer and
    temperature 0.3.
    """

    d_max: int = 1
    l_max: int = 3
    n_max: int = 3
    temperature: float = 0.3
    model: str = DEFAULT_MODEL
    role_models: dict = field(default_factory=dict)
    max_in_flight: int = 8
    concurrent: bool = True
    context_chars: int = 12000

    def __post_init__(self):
        for name, low in (("d_max", 0), ("l_max", 1), ("n_max", 1), ("max_in_flight", 1)):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < low:
                raise ValueError(f"{name} must be an int >= {low}, got {value!r}")
        if not 0.0 <= float(self.temperature) <= 2.0:
            raise ValueError(f"temperature must be in [0, 2], got {self.temperature}")
        unknown = set(self.role_models) - set(ROLES) - {"judge", "io", "cot"}
        if unknown:
            raise ValueError(f"unknown agent roles in role_models: {sorted(unknown)}")

    def model_for(self, role: str) -> str:
        return self.role_models.get(role, self.model)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["role_models"] = dict(sorted(self.role_models.items()))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AgotConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - names
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    def replace(self, **changes) -> "AgotConfig":
        return dataclasses.replace(self, **changes)
