from datetime import datetime
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars and arrays inside ``value`` to plain Python objects."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


class DiagnosticsReport(BaseModel):
    """Outcome of one structural check."""

    name: str
    statistic: float
    tolerance: float
    passed: bool
    details: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("details", mode="before")
    @classmethod
    def _plain_details(cls, value: Any) -> Any:
        return to_jsonable(value or {})

    @classmethod
    def from_statistic(cls, name: str, statistic: float, tolerance: float,
                       details: Optional[Dict[str, Any]] = None,
                       passed: Optional[bool] = None) -> "DiagnosticsReport":
        """Build a report; ``passed`` defaults to ``statistic <= tolerance``."""
        statistic = float(statistic)
        tolerance = float(tolerance)
        if passed is None:
            passed = bool(statistic <= tolerance)
        return cls(name=name, statistic=statistic, tolerance=tolerance, passed=passed,
                   details=details or {})


class RunReport(BaseModel):
    """Every check of one run."""

    schema_version: str
    system: str
    generated_at: datetime
    passed: bool
    reports: List[DiagnosticsReport]
    fitted_orders: Dict[str, float] = Field(default_factory=dict)
