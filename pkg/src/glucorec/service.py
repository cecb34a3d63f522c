"""What-if recommendation service over trained checkpoints.

Checkpoints are loaded once at startup and shared read-only across
requests; nothing mutates server state, so identical queries always
return identical results. Subject streams (canonical CSV) back the
history endpoint that the explorer UI charts.
"""

from __future__ import annotations

import logging
from datetime import timedelta
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .errors import GlucorecError, QueryError
from .ingest import parse_canonical_csv
from .models import (
    ModelCheckpoint,
    RecommendQuery,
    ResidualStack,
    load_checkpoint,
    predict,
)
from .recexamples import HISTORY_STEPS, HORIZONS, Scenario
from .timeseries import EventStream, interpolate_gaps, minute_of_day

logger = logging.getLogger(__name__)

TARGET_RANGE = (40.0, 400.0)


class HistoryChannels(BaseModel):
    bgl: list[float]
    carbs: list[float]
    bolus: list[float]
    basal: list[float]


class RecommendRequest(BaseModel):
    subject_id: str
    scenario: str
    architecture: str = "nbeats"
    target_bgl: float
    tau: int
    planned_carbs: float | None = None
    history: HistoryChannels | None = None
    event_minute_of_day: int | None = Field(
        default=None,
        description="Clock minute of the proposed action (t+10); derived "
                    "from the stream for server-side histories, defaults to "
                    "noon for inline ones.")


class ModelInfo(BaseModel):
    checkpoint_id: str
    subject_id: str
    scenario: str
    example_class: str
    architecture: str
    seed: int
    val_mae: float | None


class RecommendResponse(BaseModel):
    recommendation: float
    display: str
    raw_value: float
    clamped: bool
    unit: str
    model: ModelInfo
    per_block_forecasts: list[float] | None = None


class _LoadedModel:
    def __init__(self, ckpt: ModelCheckpoint):
        self.ckpt = ckpt
        self.stack: ResidualStack = ckpt.build_stack()

    @property
    def info(self) -> ModelInfo:
        return ModelInfo(
            checkpoint_id=self.ckpt.checkpoint_id,
            subject_id=self.ckpt.subject_id,
            scenario=self.ckpt.config.scenario.value,
            example_class=self.ckpt.config.example_class.value,
            architecture=self.ckpt.config.architecture,
            seed=self.ckpt.seed,
            val_mae=self.ckpt.val_mae,
        )


def _load_models(checkpoint_dir: Path) -> dict[tuple, _LoadedModel]:
    """Best checkpoint (lowest validation MAE, then seed) per serving key."""
    loaded: dict[tuple, _LoadedModel] = {}
    for path in sorted(checkpoint_dir.glob("*.ckpt")):
        model = _LoadedModel(load_checkpoint(path))
        cfg = model.ckpt.config
        key = (model.ckpt.subject_id, cfg.scenario.value, cfg.architecture)
        rank = (model.ckpt.val_mae if model.ckpt.val_mae is not None
                else float("inf"), model.ckpt.seed)
        incumbent = loaded.get(key)
        if incumbent is None:
            loaded[key] = model
            continue
        inc_rank = (incumbent.ckpt.val_mae
                    if incumbent.ckpt.val_mae is not None else float("inf"),
                    incumbent.ckpt.seed)
        if rank < inc_rank:
            loaded[key] = model
    return loaded


def _load_streams(data_dir: Path | None) -> dict[str, EventStream]:
    streams: dict[str, EventStream] = {}
    if data_dir is None:
        return streams
    for path in sorted(Path(data_dir).glob("*.csv")):
        try:
            stream = interpolate_gaps(parse_canonical_csv(path))
        except GlucorecError as exc:
            logger.warning("skipping %s: %s", path, exc)
            continue
        streams[stream.subject_id] = stream
    return streams


def _latest_window(stream: EventStream) -> dict:
    """72-step window ending at the last non-missing BGL sample."""
    _, last = stream.bgl_valid_range()
    end = stream.index_of(last)
    start = end - HISTORY_STEPS + 1
    if start < 0 or np.isnan(stream.bgl[start:end + 1]).any():
        raise QueryError(
            f"subject {stream.subject_id} has fewer than {HISTORY_STEPS} "
            "contiguous BGL steps")
    ts = stream.timestamps()[start:end + 1]
    iso = None
    if stream.epoch is not None:
        iso = [(stream.epoch + timedelta(minutes=int(m))).isoformat()
               for m in ts]
    return {
        "subject_id": stream.subject_id,
        "t": int(ts[-1]),
        "minutes": [int(m) for m in ts],
        "timestamps": iso,
        "bgl": [float(v) for v in stream.bgl[start:end + 1]],
        "interpolated": [bool(v) for v in
                         stream.bgl_interpolated[start:end + 1]],
        "carbs": [float(v) for v in stream.meal[start:end + 1]],
        "bolus": [float(v) for v in stream.bolus[start:end + 1]],
        "basal": [float(v) for v in stream.basal[start:end + 1]],
    }


def create_app(checkpoint_dir: str | Path,
               data_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="glucorec what-if service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    models = _load_models(Path(checkpoint_dir))
    streams = _load_streams(Path(data_dir) if data_dir else None)
    logger.info("loaded %d checkpoints, %d subject streams",
                len(models), len(streams))

    @app.get("/api/models")
    def list_models() -> list[ModelInfo]:
        return [models[key].info for key in sorted(models)]

    @app.get("/api/subjects/{subject_id}/latest-history")
    def latest_history(subject_id: str) -> dict:
        stream = streams.get(subject_id)
        if stream is None:
            raise HTTPException(404, f"unknown subject {subject_id!r}")
        try:
            return _latest_window(stream)
        except QueryError as exc:
            raise HTTPException(404, str(exc))

    @app.post("/api/recommend")
    def recommend(req: RecommendRequest) -> RecommendResponse:
        try:
            scenario = Scenario(req.scenario)
        except ValueError:
            raise HTTPException(
                404, f"unknown scenario {req.scenario!r}; valid: "
                     f"{[s.value for s in Scenario]}")
        if req.tau not in HORIZONS:
            raise HTTPException(
                400, f"tau {req.tau} not in {{30..90 step 5}}")
        if not TARGET_RANGE[0] <= req.target_bgl <= TARGET_RANGE[1]:
            raise HTTPException(
                400, f"target_bgl {req.target_bgl} outside "
                     f"[{TARGET_RANGE[0]}, {TARGET_RANGE[1]}]")
        if scenario is Scenario.BOLUS_WITH_CARBS and req.planned_carbs is None:
            raise HTTPException(400, "bolus-with-carbs needs planned_carbs")
        if req.planned_carbs is not None and req.planned_carbs < 0:
            raise HTTPException(400, "planned_carbs must be >= 0")

        if req.history is not None:
            channels = req.history
            event_minute = (req.event_minute_of_day
                            if req.event_minute_of_day is not None else 720)
        else:
            stream = streams.get(req.subject_id)
            if stream is None:
                raise HTTPException(404, f"unknown subject {req.subject_id!r}")
            try:
                window = _latest_window(stream)
            except QueryError as exc:
                raise HTTPException(404, str(exc))
            channels = HistoryChannels(bgl=window["bgl"], carbs=window["carbs"],
                                       bolus=window["bolus"],
                                       basal=window["basal"])
            event_minute = (req.event_minute_of_day
                            if req.event_minute_of_day is not None
                            else minute_of_day(window["t"] + 10))

        model = models.get((req.subject_id, scenario.value, req.architecture))
        if model is None:
            raise HTTPException(
                409, f"no checkpoint loaded for subject={req.subject_id!r} "
                     f"scenario={scenario.value!r} "
                     f"architecture={req.architecture!r}")
        query = RecommendQuery(
            history_bgl=np.array(channels.bgl),
            history_carbs=np.array(channels.carbs),
            history_bolus=np.array(channels.bolus),
            history_basal=np.array(channels.basal),
            tau=req.tau, target_bgl=req.target_bgl,
            event_time=event_minute, planned_carbs=req.planned_carbs)
        try:
            rec = predict(model.ckpt, query, stack=model.stack)
        except QueryError as exc:
            raise HTTPException(400, str(exc))
        per_block = rec.per_block if model.ckpt.config.architecture == "nbeats" \
            else None
        return RecommendResponse(
            recommendation=rec.value,
            display=f"{round(rec.value, 1):.1f} {rec.unit}",
            raw_value=rec.raw_value,
            clamped=rec.clamped,
            unit=rec.unit,
            model=model.info,
            per_block_forecasts=per_block,
        )

    return app
