"""Hit rates and 3-D positioning error statistics."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, HstError

log = logging.getLogger(__name__)

ERROR_MODELS = ("penalty", "euclidean3d")
STAT_FIELDS = ("mean", "std", "min", "median", "max")


@dataclass(frozen=True)
class ErrorModelConfig:
    """``penalty``: 2-D error + ``building_penalty`` for a wrong building +
    ``floor_penalty`` per floor of error. ``euclidean3d`` puts the floor
    offset (times ``floor_height``) inside the square root instead."""

    kind: str = "penalty"
    building_penalty: float = 50.0
    floor_penalty: float = 4.0
    floor_height: float = 4.0

    def __post_init__(self):
        if self.kind not in ERROR_MODELS:
            raise ConfigError(f"unknown error model {self.kind!r}")
        if self.building_penalty < 0 or self.floor_penalty < 0:
            raise ConfigError("penalties must be non-negative")

    def to_dict(self):
        return asdict(self)


def positioning_errors(pred, truth, cfg: ErrorModelConfig = ErrorModelConfig()) -> np.ndarray:
    """Per-record errors in meters. ``pred``/``truth`` are ``(building, floor, coords)``."""
    b_hat, f_hat, xy_hat = (np.asarray(a) for a in pred)
    b, f, xy = (np.asarray(a) for a in truth)
    xy_hat = xy_hat.reshape(-1, 2).astype(np.float64)
    xy = xy.reshape(-1, 2).astype(np.float64)
    d2 = ((xy - xy_hat) ** 2).sum(axis=1)
    df = np.abs(np.atleast_1d(f) - np.atleast_1d(f_hat)).astype(np.float64)
    wrong_b = (np.atleast_1d(b) != np.atleast_1d(b_hat)).astype(np.float64)
    if cfg.kind == "euclidean3d":
        return np.sqrt(d2 + (cfg.floor_height * df) ** 2) + cfg.building_penalty * wrong_b
    return np.sqrt(d2) + cfg.building_penalty * wrong_b + cfg.floor_penalty * df


def positioning_error(pred, truth, cfg: ErrorModelConfig = ErrorModelConfig()) -> float:
    """Error of a single ``(building, floor, (x, y))`` estimate."""
    (bh, fh, xyh), (b, f, xy) = pred, truth
    return float(positioning_errors(([bh], [fh], [xyh]), ([b], [f], [xy]), cfg)[0])


@dataclass
class EvalReport:
    building_hit: float
    floor_hit: float
    mean: float
    std: float
    min: float
    median: float
    max: float
    count: int
    model: str = ""
    dataset_id: str = ""
    error_model: dict = field(default_factory=lambda: ErrorModelConfig().to_dict())

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def evaluate(pred, truth, cfg: ErrorModelConfig = ErrorModelConfig(), model: str = "", dataset_id: str = "") -> EvalReport:
    n = len(truth[0])
    if n == 0 or any(len(a) != n for a in (*pred, *truth)):
        raise HstError(f"prediction/truth length mismatch or empty set ({[len(a) for a in (*pred, *truth)]})")
    err = positioning_errors(pred, truth, cfg)
    mean = math.fsum(err) / n
    var = math.fsum((e - mean) ** 2 for e in err) / n
    ordered = np.sort(err)
    return EvalReport(
        building_hit=float(np.mean(np.asarray(pred[0]) == np.asarray(truth[0]))),
        floor_hit=float(np.mean(np.asarray(pred[1]) == np.asarray(truth[1]))),
        mean=mean,
        std=math.sqrt(var),
        min=float(ordered[0]),
        median=float(ordered[(n - 1) // 2]),  # lower middle for even counts
        max=float(ordered[-1]),
        count=n,
        model=model,
        dataset_id=dataset_id,
        error_model=cfg.to_dict(),
    )


def compare_reports(a: EvalReport, b: EvalReport) -> dict:
    """Field-wise ``b - a`` plus a sign summary (negative error deltas mean ``b`` is better)."""
    if a.count == 0 or b.count == 0:
        raise HstError("cannot compare an empty report")
    if a.dataset_id != b.dataset_id:
        log.warning("comparing reports from different datasets (%s vs %s)", a.dataset_id, b.dataset_id)
    if a.error_model != b.error_model:
        log.warning("comparing reports computed with different error models")
    fields = ("building_hit", "floor_hit") + STAT_FIELDS
    delta = {f: getattr(b, f) - getattr(a, f) for f in fields}
    better = {f: (delta[f] > 0) if f.endswith("hit") else (delta[f] < 0) for f in fields}
    return {"a": a.model, "b": b.model, "delta": delta, "b_better": better}


def format_table(reports: list[EvalReport]) -> str:
    header = ["Model", "Building hit", "Floor hit", "Average", "Std.", "Min.", "Median", "Max."]
    rows = [[r.model or "-", f"{100 * r.building_hit:.2f}%", f"{100 * r.floor_hit:.2f}%",
             *(f"{getattr(r, f):.2f} m" for f in STAT_FIELDS)] for r in reports]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in rows]
    return "\n".join(lines)
