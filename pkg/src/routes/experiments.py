from pathlib import Path

from fastapi import APIRouter, HTTPException, status

from src.conf.config import settings
from src.schemas import Experiment, ExperimentInfo, ExperimentRequest, ManifestModel
from src.services.errors import ConfigError, DomainError, OddmError, SizeGuardError
from src.services.experiments import DESCRIPTIONS, run_experiment, validate_config

router = APIRouter(prefix="/experiments", tags=["experiments"])


def _override(key: str, value) -> str:
    if isinstance(value, list):
        value = ",".join(str(item) for item in value)
    return f"{key}={value}"


def _output_dir(requested: str | None, experiment: str) -> str:
    relative = Path(requested or experiment)
    if relative.is_absolute() or ".." in relative.parts:
        raise HTTPException(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            detail="output_dir must be a relative path below the results directory",
        )
    return str(Path(settings.output_dir) / relative)


@router.get("/", response_model=list[ExperimentInfo])
def list_experiments():
    """
    Lists the experiment families that can be run.

    :return: Name and one-line description per experiment.
    :rtype: list[ExperimentInfo]
    """
    return [ExperimentInfo(name=name, description=text) for name, text in DESCRIPTIONS.items()]


@router.post("/{experiment}", response_model=ManifestModel, status_code=status.HTTP_201_CREATED)
def create_experiment_run(experiment: Experiment, body: ExperimentRequest):
    """
    Runs an experiment synchronously and returns its manifest.

    :param experiment: Experiment family.
    :type experiment: Experiment
    :param body: Configuration keys and an optional output sub-directory.
    :type body: ExperimentRequest
    :return: The manifest of the written result files.
    :rtype: ManifestModel
    """
    overrides = [_override(key, value) for key, value in body.settings.items()]
    output_dir = _output_dir(body.output_dir, experiment)
    try:
        cfg = validate_config("", overrides, experiment=experiment, output_dir=output_dir)
    except ConfigError as exc:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=exc.issues)
    if cfg.experiment == "ber" and cfg.bits_per_point > settings.api_max_bits:
        raise HTTPException(
            status_code=status.HTTP_413_REQUEST_ENTITY_TOO_LARGE,
            detail=f"bits_per_point above {settings.api_max_bits} must be run from the command line",
        )
    try:
        return run_experiment(cfg)
    except DomainError as exc:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(exc))
    except SizeGuardError as exc:
        raise HTTPException(status_code=status.HTTP_413_REQUEST_ENTITY_TOO_LARGE, detail=str(exc))
    except OddmError as exc:
        raise HTTPException(status_code=status.HTTP_500_INTERNAL_SERVER_ERROR, detail=str(exc))
