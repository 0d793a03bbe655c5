"""FastAPI application wrapping the core engine.

The service is stateless for queries (every request names its weight
sources) and stateful only for training, which runs as a single-flight
background job with live progress, cancellation, and the same save-on-finish
semantics as the CLI.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..backward import GradientSet
from ..config import EngineConfig, apply_settings, derive_dims
from ..dataset import WEIGHTS_SUBDIR, center_crop_square, read_ppm, scan
from ..errors import ConfigError, DatasetError, NumericFault, StoreError
from ..forward import ActivationSet, build_resize_plan, forward_pass, resize_normalize
from ..optimizer import AdamState
from ..oracle import gradient_check
from ..trainer import evaluate, train
from ..weightstore import (BINARY_FILENAME, HEADER_FILENAME, WeightOrigin,
                           WeightSet, export_header, load_binary, load_header,
                           resolve_weights, save_binary)
from . import schemas
from .jobs import JobBusyError, TrainJob, TrainJobManager


def _engine_config(settings: schemas.EngineSettings) -> EngineConfig:
    raw = settings.as_raw_settings()
    base = EngineConfig.defaults()
    return apply_settings(base, raw) if raw else base


def _resolve(selection: schemas.WeightSelection, cfg: EngineConfig,
             default_path: Path | None = None) -> tuple[WeightSet, WeightOrigin]:
    binary = Path(selection.weights_path) if selection.weights_path else default_path
    baked = (load_header(selection.baked_header, cfg.net)
             if selection.baked_header else None)
    return resolve_weights(binary, baked, cfg.net, selection.seed, cfg.policy)


def _load_tensor(image_path: str, cfg: EngineConfig) -> np.ndarray:
    square = center_crop_square(read_ppm(image_path))
    plan = build_resize_plan(cfg.net.input_size, square.shape[0])
    return resize_normalize(square, plan, cfg.policy)


def create_app() -> FastAPI:
    app = FastAPI(title="tinycnn service", version=__version__)
    manager = TrainJobManager()
    app.state.jobs = manager

    def error_response(status: int, category: str, exc: Exception) -> JSONResponse:
        body = schemas.ErrorResponse(error=str(exc), category=category)
        return JSONResponse(status_code=status, content=body.model_dump())

    @app.exception_handler(ConfigError)
    async def _config_error(request: Request, exc: ConfigError):
        return error_response(400, "config", exc)

    @app.exception_handler(DatasetError)
    async def _dataset_error(request: Request, exc: DatasetError):
        return error_response(400, "dataset", exc)

    @app.exception_handler(StoreError)
    async def _store_error(request: Request, exc: StoreError):
        return error_response(400, "io", exc)

    @app.exception_handler(NumericFault)
    async def _numeric_error(request: Request, exc: NumericFault):
        return error_response(500, "numeric", exc)

    @app.exception_handler(FileNotFoundError)
    async def _missing_file(request: Request, exc: FileNotFoundError):
        return error_response(404, "not-found", exc)

    @app.exception_handler(JobBusyError)
    async def _busy(request: Request, exc: JobBusyError):
        return error_response(409, "busy", exc)

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/config/dims", response_model=schemas.DimsResponse)
    def config_dims(request: schemas.DimsRequest):
        cfg = _engine_config(request.settings)
        dims = derive_dims(cfg.net)
        return schemas.DimsResponse(
            input_size=cfg.net.input_size,
            conv1_out=dims.conv1_out, pool1_out=dims.pool1_out,
            conv2_out=dims.conv2_out, flattened=dims.flattened,
            conv1_w=dims.conv1_w, conv1_b=dims.conv1_b,
            conv2_w=dims.conv2_w, conv2_b=dims.conv2_b,
            dense_w=dims.dense_w, dense_b=dims.dense_b,
            total=dims.total, binary_bytes=dims.total * 4)

    @app.post("/infer", response_model=schemas.InferResponse)
    def infer(request: schemas.InferRequest):
        cfg = _engine_config(request.settings)
        weights, origin = _resolve(request.weights, cfg)
        tensor = _load_tensor(request.image_path, cfg)
        acts = ActivationSet.allocate(cfg.net, derive_dims(cfg.net))
        probs = forward_pass(tensor, weights, acts, cfg.net, cfg.policy)
        winner = int(np.argmax(probs))
        return schemas.InferResponse(
            label=cfg.classes.labels[winner],
            confidence_pct=100.0 * float(probs[winner]),
            probabilities={label: 100.0 * float(p)
                           for label, p in zip(cfg.classes.labels, probs)},
            origin=origin.kind.value, origin_source=origin.source)

    @app.post("/eval", response_model=schemas.EvalResponse)
    def eval_split(request: schemas.EvalRequest):
        cfg = _engine_config(request.settings)
        index = scan(request.data_root, cfg.classes, cfg.train.validation_images)
        default = Path(request.data_root) / WEIGHTS_SUBDIR / BINARY_FILENAME
        weights, _ = _resolve(request.weights, cfg, default)
        pairs = {"train": index.train_pairs,
                 "validation": index.validation_pairs,
                 "all": index.all_pairs}[request.split]()
        result = evaluate(pairs, weights, cfg.net, cfg.policy)
        return schemas.EvalResponse(
            accuracy_pct=result.accuracy_pct, images=result.images,
            labels=list(cfg.classes.labels),
            confusion=result.confusion.tolist())

    def _run_training(job: TrainJob, request: schemas.TrainRequest):
        cfg = _engine_config(request.settings)
        index = scan(request.data_root, cfg.classes, cfg.train.validation_images)
        default = Path(request.data_root) / WEIGHTS_SUBDIR / BINARY_FILENAME
        weights, origin = _resolve(request.weights, cfg, default)
        job.append_log("Continuing from saved weights" if origin.is_pretrained
                       else "Starting fresh training")
        dims = derive_dims(cfg.net)
        grads = GradientSet.allocate(cfg.net, dims)
        adam = AdamState.allocate(dims)
        report = train(index, weights, grads, adam, cfg.net, cfg.train, cfg.policy,
                       interrupt=job.cancel_event.is_set, log=job.append_log,
                       on_batch=job.append_record, origin=origin)
        saved_path = None
        if request.save:
            out_dir = Path(request.data_root) / WEIGHTS_SUBDIR
            out_dir.mkdir(parents=True, exist_ok=True)
            save_binary(weights, out_dir / BINARY_FILENAME)
            export_header(weights, cfg.net, cfg.classes, out_dir / HEADER_FILENAME)
            saved_path = str(out_dir / BINARY_FILENAME)
            job.append_log(f"Saved weights to {saved_path}")
        job.result = schemas.TrainResultModel(
            final_train_accuracy=report.final_train_accuracy,
            validation_accuracy=report.validation_accuracy,
            images_processed=report.images_processed,
            epochs_completed=report.epochs_completed,
            interrupted=report.interrupted,
            origin=origin.kind.value,
            weights_path=saved_path).model_dump()

    @app.post("/train", response_model=schemas.TrainStartResponse, status_code=202)
    def start_training(request: schemas.TrainRequest):
        # validate config and dataset before accepting the job
        cfg = _engine_config(request.settings)
        scan(request.data_root, cfg.classes, cfg.train.validation_images)
        job = manager.start(lambda j: _run_training(j, request))
        return schemas.TrainStartResponse(job_id=job.job_id, state=job.state)

    def _status(job: TrainJob) -> schemas.TrainStatusResponse:
        return schemas.TrainStatusResponse(
            job_id=job.job_id, state=job.state, log=list(job.log),
            records=[schemas.BatchRecordModel(
                epoch=r.epoch, batch=r.batch, batches=r.batches,
                loss=r.loss, accuracy_pct=r.accuracy_pct) for r in job.records],
            result=(schemas.TrainResultModel(**job.result)
                    if job.result is not None else None),
            error=job.error, error_category=job.error_category)

    @app.get("/train/{job_id}", response_model=schemas.TrainStatusResponse)
    def training_status(job_id: str):
        job = manager.get(job_id)
        if job is None:
            raise FileNotFoundError(f"no training job {job_id}")
        return _status(job)

    @app.post("/train/{job_id}/cancel", response_model=schemas.CancelResponse)
    def cancel_training(job_id: str):
        job = manager.cancel(job_id)
        if job is None:
            raise FileNotFoundError(f"no training job {job_id}")
        return schemas.CancelResponse(job_id=job.job_id, state=job.state,
                                      cancel_requested=True)

    @app.post("/weights/inspect", response_model=schemas.InspectResponse)
    def inspect(request: schemas.InspectRequest):
        cfg = _engine_config(request.settings)
        weights, origin = _resolve(request.weights, cfg)
        layers = [schemas.LayerStats(
            name=name, count=arr.size, min=float(arr.min()), max=float(arr.max()),
            mean=float(arr.mean()), std=float(arr.std()))
            for name, arr in weights.arrays()]
        return schemas.InspectResponse(origin=origin.kind.value,
                                       origin_source=origin.source,
                                       total_params=weights.total_params(),
                                       layers=layers)

    @app.post("/weights/export-header", response_model=schemas.ExportHeaderResponse)
    def export_header_endpoint(request: schemas.ExportHeaderRequest):
        cfg = _engine_config(request.settings)
        weights = load_binary(request.weights_path, cfg.net)
        out = (Path(request.out_path) if request.out_path
               else Path(request.weights_path).parent / HEADER_FILENAME)
        export_header(weights, cfg.net, cfg.classes, out)
        return schemas.ExportHeaderResponse(header_path=str(out))

    @app.post("/gradcheck", response_model=schemas.GradcheckResponse)
    def gradcheck(request: schemas.GradcheckRequest):
        cfg = _engine_config(request.settings)
        net = apply_settings(cfg, {"input_size": str(request.input_size)}).net
        result = gradient_check(net, cfg.policy, draws=request.draws,
                                seed=request.seed)
        return schemas.GradcheckResponse(
            max_rel_error=result.max_rel_error,
            production_rel_error=result.production_rel_error,
            checked=result.checked, masked=result.masked, draws=result.draws,
            tolerance=result.tolerance, passed=result.passed)

    @app.post("/bench", response_model=schemas.BenchResponse)
    def bench(request: schemas.BenchRequest):
        if request.frames < 1:
            raise ConfigError("frames must be >= 1")
        cfg = _engine_config(request.settings)
        weights, _ = _resolve(request.weights, cfg)
        square = center_crop_square(read_ppm(request.image_path))
        plan = build_resize_plan(cfg.net.input_size, square.shape[0])
        acts = ActivationSet.allocate(cfg.net, derive_dims(cfg.net))
        timings = []
        for _ in range(request.frames):
            start = time.perf_counter()
            tensor = resize_normalize(square, plan, cfg.policy)
            forward_pass(tensor, weights, acts, cfg.net, cfg.policy)
            timings.append((time.perf_counter() - start) * 1000.0)
        mean = sum(timings) / len(timings)
        return schemas.BenchResponse(frame_ms=timings, mean_ms=mean,
                                     min_ms=min(timings), max_ms=max(timings),
                                     fps_mean=1000.0 / mean if mean > 0 else 0.0)

    return app
