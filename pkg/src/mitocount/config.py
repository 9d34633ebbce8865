"""Pipeline and workload configuration models.

Config files are YAML (JSON is valid YAML and works too); every key is
validated here before a run starts. The same models serve as the request
bodies of the HTTP service.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, Field, field_validator, model_validator

from .detect import MAX_BATCH
from .synthetic import SlideSpec


class ConfigError(ValueError):
    """Invalid configuration file or field."""


class DetectorSpec(BaseModel):
    id: Literal["passthrough", "blob", "noise", "ensemble"] = "passthrough"
    params: dict = Field(default_factory=dict)


class ServiceTimeModel(BaseModel):
    """Virtual-time service costs per stage, in simulated seconds.

    Inference cost scales with the number of detector batches, post-processing
    with the number of raw instances; download is flat plus the configured
    network latency.
    """

    download_s: float = 0.05
    gate_s: float = 0.02
    inference_per_batch_s: float = 0.5
    postprocess_base_s: float = 0.05
    postprocess_per_instance_s: float = 0.001


class PipelineConfig(BaseModel):
    download_workers: int = 1
    inference_workers: int = 1
    postprocess_workers: int = 1
    queue_capacity: int = 8
    detector: DetectorSpec = Field(default_factory=DetectorSpec)
    gate: Literal["heuristic", "passthrough"] = "heuristic"
    mode: Literal["wall", "virtual"] = "wall"
    submit_policy: Literal["block", "reject"] = "block"
    download_latency_s: float = 0.0
    mask_threshold: float = 0.5
    min_width_um: float = 3.0
    max_interpolar_um: float = 15.0
    local_merge: bool = True
    tile_coverage: float = 0.05
    service_times: ServiceTimeModel = Field(default_factory=ServiceTimeModel)

    @field_validator("download_workers", "inference_workers", "postprocess_workers")
    @classmethod
    def _workers_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("worker counts must be >= 1")
        return v

    @field_validator("queue_capacity")
    @classmethod
    def _capacity_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("queue capacity must be >= 1")
        return v

    @field_validator("mask_threshold")
    @classmethod
    def _threshold_open_interval(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError("mask threshold must lie in (0, 1)")
        return v


class WorkloadSpec(BaseModel):
    """Workload description: how many slides, their mix, and arrival model.

    ``slides_per_day`` sets the Poisson arrival rate; ``count_ratio`` is the
    fraction of slides that carry tissue (the rest are blanks the gate should
    stop). ``tiles_per_slide`` and ``batch_size`` describe the per-slide
    detector workload; batch size is capped by the inference stack limit.
    """

    slides_per_day: int = 3323
    count_ratio: float = 0.35
    tiles_per_slide: int = 8164
    batch_size: int = 16
    arrival: Literal["poisson", "immediate", "trace"] = "immediate"
    trace_arrivals_s: list[float] | None = None
    seed: int = 0
    n_slides: int = 10
    slide_source: str | None = None
    slide_template: SlideSpec = Field(default_factory=lambda: SlideSpec(n_figures=5))

    @field_validator("count_ratio")
    @classmethod
    def _ratio_in_range(cls, v: float) -> float:
        if not 0.0 < v <= 1.0:
            raise ValueError("count_ratio must lie in (0, 1]")
        return v

    @field_validator("slides_per_day", "tiles_per_slide", "n_slides")
    @classmethod
    def _counts_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("workload counts must be positive")
        return v

    @field_validator("batch_size")
    @classmethod
    def _batch_in_range(cls, v: int) -> int:
        if not 1 <= v <= MAX_BATCH:
            raise ValueError(f"batch_size must lie in [1, {MAX_BATCH}]")
        return v

    @model_validator(mode="after")
    def _trace_needs_arrivals(self) -> "WorkloadSpec":
        if self.arrival == "trace" and not self.trace_arrivals_s:
            raise ValueError("trace arrival model requires trace_arrivals_s")
        return self


def _load_yaml(path: Path | str) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping at the top level")
    return data


def load_pipeline_config(path: Path | str) -> PipelineConfig:
    try:
        return PipelineConfig(**_load_yaml(path))
    except ValueError as exc:
        raise ConfigError(f"invalid pipeline config {path}: {exc}") from exc


def load_workload(path: Path | str) -> WorkloadSpec:
    try:
        return WorkloadSpec(**_load_yaml(path))
    except ValueError as exc:
        raise ConfigError(f"invalid workload spec {path}: {exc}") from exc
