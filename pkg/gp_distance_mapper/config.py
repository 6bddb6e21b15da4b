"""
gp_distance_mapper/config.py

Runtime configuration for the mapper:
  1. Loads an optional `.env` from the project root.
  2. Exposes environment-driven defaults as module constants.
  3. Loads JSON inputs (scenes, planner scenarios, query grids) and validates them against
     the JSON Schemas shipped with each area.

Environment Variables (in .env file):
  - GPDM_LOG_LEVEL:           logging level for the entry points (default "INFO").
  - GPDM_WORKERS:             threads used for independent local-GP builds (default 1).
  - GPDM_LENGTHSCALE:         SE kernel lengthscale in metres (default 0.2).
  - GPDM_SIGNAL_VARIANCE:     SE kernel signal variance (default 1.0).
  - GPDM_NOISE_VARIANCE:      observation noise variance (default 1e-4).
  - GPDM_TRAINING_RESOLUTION: training point voxel size in metres (default 0.01).
  - GPDM_SEED:                seed for noise and query sampling (default 0).
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict

from dotenv import load_dotenv
from jsonschema import ValidationError, validate

# Load environment variables from the project root .env file
env_path = Path(__file__).parent.parent / ".env"
load_dotenv(env_path)

LOG_LEVEL = os.getenv("GPDM_LOG_LEVEL", "INFO").upper()
WORKERS = max(1, int(os.getenv("GPDM_WORKERS", "1")))
LENGTHSCALE = float(os.getenv("GPDM_LENGTHSCALE", "0.2"))
SIGNAL_VARIANCE = float(os.getenv("GPDM_SIGNAL_VARIANCE", "1.0"))
NOISE_VARIANCE = float(os.getenv("GPDM_NOISE_VARIANCE", "1e-4"))
TRAINING_RESOLUTION = float(os.getenv("GPDM_TRAINING_RESOLUTION", "0.01"))
SEED = int(os.getenv("GPDM_SEED", "0"))

LOG_FORMAT = "%(asctime)s %(levelname)s %(message)s"

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised when a configuration file cannot be read or fails schema validation."""
    pass


def configure_logging(level: str = LOG_LEVEL) -> None:
    """Configure root logging the same way for every entry point."""
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT)


def load_schema(schema_path: Path) -> Dict[str, Any]:
    """Read a JSON Schema document shipped with the package."""
    try:
        return json.loads(Path(schema_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Failed to load schema '{schema_path}': {e}") from e


def validate_document(document: Any, schema_path: Path) -> Any:
    """
    Validate an already-parsed JSON document against a schema file.

    Raises:
        ConfigError: If the document does not satisfy the schema.
    """
    schema = load_schema(schema_path)
    try:
        validate(instance=document, schema=schema)
    except ValidationError as e:
        raise ConfigError(f"{Path(schema_path).name} validation error: {e.message}") from e
    return document


def load_json_config(path: Path, schema_path: Path) -> Dict[str, Any]:
    """
    Load a JSON configuration file and validate it.

    Args:
        path:        JSON file supplied by the user.
        schema_path: JSON Schema the file must satisfy.

    Returns:
        The parsed document.

    Raises:
        ConfigError: If the file is missing, is not JSON, or fails validation.
    """
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"Config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Failed to parse JSON in '{path}': {e}") from e
    logger.debug(f"Loaded config {path}")
    return validate_document(document, schema_path)
