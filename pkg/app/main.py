import logging

import numpy as np
from fastapi import FastAPI, HTTPException, status
from pydantic import ValidationError

from .attacks import build_threat, effective_preset
from .datasets import build_dataset
from .exceptions import DatasetFileMissingError, RobustnessError
from .model_store import read_model_file, summarize_model
from .models import EvalConfig, EvalReport, EvaluateRequest, InspectRequest
from .reporting import attack_label
from .services import EvaluationService

logger = logging.getLogger(__name__)

app = FastAPI(title="robustkit")


def _load(path):
    if not path.is_file():
        raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail=f"Model file not found: {path}")
    try:
        return read_model_file(path)
    except RobustnessError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))


@app.get("/robustness/hello")
def read_root():
    return {"message": "Hello from the Robustness Evaluation Microservice"}


@app.get("/robustness/health")
def health_check():
    """Health check endpoint for Docker/Kubernetes"""
    return {
        "status": "healthy",
        "service": "robustness-ms",
        "version": "1.0.0"
    }


@app.post("/robustness/models/inspect")
def inspect_model(request: InspectRequest):
    return summarize_model(_load(request.path))


@app.post("/robustness/evaluate", response_model=EvalReport)
def evaluate(request: EvaluateRequest):
    loaded = _load(request.model_path)
    spec = request.attack
    try:
        threat = build_threat(spec.preset, spec.norm, spec.epsilon, spec.alpha, spec.space,
                              spec.iterations, spec.restarts)
        preset = effective_preset(spec.preset, threat)
        config = EvalConfig(threat=threat, attack_preset=preset, post_quantize=spec.post_quantize,
                            seed=request.seed, batch_size=request.batch_size)
    except ValidationError as e:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=e.errors(
            include_url=False, include_context=False, include_input=False))
    except RobustnessError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))

    dtype = np.dtype(request.dtype)
    try:
        dataset = build_dataset(request.dataset, dtype)
        service = EvaluationService(loaded.network.astype(dtype), loaded.transform, model_name=request.model_name)
        report = service.robust_accuracy(dataset, config, label=attack_label(spec, threat.norm.value, preset))
    except DatasetFileMissingError as e:
        raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail=str(e))
    except RobustnessError as e:
        logger.error("Evaluation of %s failed: %s", request.model_path, e)
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
    return report
