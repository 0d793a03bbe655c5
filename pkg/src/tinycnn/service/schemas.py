"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class ErrorResponse(BaseModel):
    error: str
    category: Literal["config", "dataset", "numeric", "io", "busy", "not-found"]


class EngineSettings(BaseModel):
    """Optional overrides applied on top of the engine defaults.

    Mirrors the KEY=VALUE configuration file one to one.
    """

    input_size: Optional[int] = None
    conv1_kernel: Optional[int] = None
    conv1_filters: Optional[int] = None
    conv2_kernel: Optional[int] = None
    conv2_filters: Optional[int] = None
    num_classes: Optional[int] = None
    labels: Optional[list[str]] = None
    learning_rate: Optional[float] = None
    beta1: Optional[float] = None
    beta2: Optional[float] = None
    epsilon: Optional[float] = None
    batch_size: Optional[int] = None
    epochs: Optional[int] = None
    validation_images: Optional[int] = None
    shuffle_seed: Optional[int] = None
    shuffle_enabled: Optional[bool] = None
    grad_clip: Optional[float] = None
    weight_clip: Optional[float] = None
    preact_clip: Optional[float] = None
    leaky_alpha: Optional[float] = None
    pixel_scale: Optional[float] = None

    def as_raw_settings(self) -> dict[str, str]:
        raw: dict[str, str] = {}
        for name, value in self.model_dump(exclude_none=True).items():
            if name == "labels":
                raw[name] = ",".join(value)
            elif isinstance(value, bool):
                raw[name] = "true" if value else "false"
            elif isinstance(value, float):
                raw[name] = repr(value)
            else:
                raw[name] = str(value)
        return raw


class WeightSelection(BaseModel):
    """Where to look for weights; resolution follows the three-tier priority."""

    weights_path: Optional[str] = None
    baked_header: Optional[str] = None
    seed: int = 42


class DimsRequest(BaseModel):
    settings: EngineSettings = Field(default_factory=EngineSettings)


class DimsResponse(BaseModel):
    input_size: int
    conv1_out: int
    pool1_out: int
    conv2_out: int
    flattened: int
    conv1_w: int
    conv1_b: int
    conv2_w: int
    conv2_b: int
    dense_w: int
    dense_b: int
    total: int
    binary_bytes: int


class InferRequest(BaseModel):
    image_path: str
    weights: WeightSelection = Field(default_factory=WeightSelection)
    settings: EngineSettings = Field(default_factory=EngineSettings)


class InferResponse(BaseModel):
    label: str
    confidence_pct: float
    probabilities: dict[str, float]
    origin: str
    origin_source: str


class EvalRequest(BaseModel):
    data_root: str
    split: Literal["train", "validation", "all"] = "validation"
    weights: WeightSelection = Field(default_factory=WeightSelection)
    settings: EngineSettings = Field(default_factory=EngineSettings)


class EvalResponse(BaseModel):
    accuracy_pct: Optional[float]
    images: int
    labels: list[str]
    confusion: list[list[int]]


class TrainRequest(BaseModel):
    data_root: str
    weights: WeightSelection = Field(default_factory=WeightSelection)
    settings: EngineSettings = Field(default_factory=EngineSettings)
    save: bool = True


class TrainStartResponse(BaseModel):
    job_id: str
    state: str


class BatchRecordModel(BaseModel):
    epoch: int
    batch: int
    batches: int
    loss: float
    accuracy_pct: float


class TrainResultModel(BaseModel):
    final_train_accuracy: Optional[float]
    validation_accuracy: Optional[float]
    images_processed: int
    epochs_completed: int
    interrupted: bool
    origin: str
    weights_path: Optional[str]


class TrainStatusResponse(BaseModel):
    job_id: str
    state: Literal["queued", "running", "completed", "cancelled", "failed"]
    log: list[str]
    records: list[BatchRecordModel]
    result: Optional[TrainResultModel] = None
    error: Optional[str] = None
    error_category: Optional[str] = None


class CancelResponse(BaseModel):
    job_id: str
    state: str
    cancel_requested: bool


class InspectRequest(BaseModel):
    weights: WeightSelection = Field(default_factory=WeightSelection)
    settings: EngineSettings = Field(default_factory=EngineSettings)


class LayerStats(BaseModel):
    name: str
    count: int
    min: float
    max: float
    mean: float
    std: float


class InspectResponse(BaseModel):
    origin: str
    origin_source: str
    total_params: int
    layers: list[LayerStats]


class ExportHeaderRequest(BaseModel):
    weights_path: str
    out_path: Optional[str] = None
    settings: EngineSettings = Field(default_factory=EngineSettings)


class ExportHeaderResponse(BaseModel):
    header_path: str


class GradcheckRequest(BaseModel):
    input_size: int = 8
    draws: int = 20
    seed: int = 0
    settings: EngineSettings = Field(default_factory=EngineSettings)


class GradcheckResponse(BaseModel):
    max_rel_error: float
    production_rel_error: float
    checked: int
    masked: int
    draws: int
    tolerance: float
    passed: bool


class BenchRequest(BaseModel):
    image_path: str
    frames: int = 30
    weights: WeightSelection = Field(default_factory=WeightSelection)
    settings: EngineSettings = Field(default_factory=EngineSettings)


class BenchResponse(BaseModel):
    frame_ms: list[float]
    mean_ms: float
    min_ms: float
    max_ms: float
    fps_mean: float
