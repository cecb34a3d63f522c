"""Global-average and time-of-day-average recommenders.

Both are fit on the training split's label events (one value per event,
never per horizon-expanded example, so nothing is counted 13 times). The
ToD model keeps one average per five daily windows and falls back to the
global mean for windows with no training events.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import FitError
from .timeseries import TOD_WINDOWS, tod_window_of


@dataclass(frozen=True)
class BaselineModel:
    kind: str  # "global" | "tod"
    mu: float
    window_mu: dict[str, float] = field(default_factory=dict)
    window_counts: dict[str, int] = field(default_factory=dict)
    provenance: str = "train"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mu": self.mu, "window_mu": self.window_mu,
                "window_counts": self.window_counts,
                "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineModel":
        return cls(kind=d["kind"], mu=d["mu"],
                   window_mu=dict(d.get("window_mu", {})),
                   window_counts={k: int(v) for k, v
                                  in d.get("window_counts", {}).items()},
                   provenance=d.get("provenance", "train"))


def fit(events: list[tuple[float, int]], kind: str = "tod",
        provenance: str = "train") -> BaselineModel:
    """Average the label events; ``events`` holds (value, timestamp) pairs."""
    if kind not in ("global", "tod"):
        raise FitError(f"unknown baseline kind {kind!r}")
    if not events:
        raise FitError("cannot fit a baseline on zero training events")
    values = [v for v, _ in events]
    mu = sum(values) / len(values)
    window_mu: dict[str, float] = {}
    window_counts: dict[str, int] = {}
    for window in TOD_WINDOWS:
        hits = [v for v, ts in events if tod_window_of(ts).label == window.label]
        if hits:
            window_mu[window.label] = sum(hits) / len(hits)
            window_counts[window.label] = len(hits)
    return BaselineModel(kind=kind, mu=mu, window_mu=window_mu,
                         window_counts=window_counts, provenance=provenance)


def predict_at(model: BaselineModel, timestamp: int) -> float:
    """Recommendation for an action at ``timestamp`` (the event time t+10)."""
    if model.kind == "global":
        return model.mu
    label = tod_window_of(timestamp).label
    return model.window_mu.get(label, model.mu)


def predict(model: BaselineModel, example) -> float:
    return predict_at(model, example.event_time)
