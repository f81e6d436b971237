"""
Utility functions for the EV charging-station thermal monitor
Error types, logging setup, hashing, JSON files and seeded generators
"""

import hashlib
import sys
from pathlib import Path
from typing import Any, List, Optional, Union

import numpy as np
import orjson
from loguru import logger


PathLike = Union[str, Path]

JSON_OPTIONS = (
    orjson.OPT_INDENT_2
    | orjson.OPT_SORT_KEYS
    | orjson.OPT_SERIALIZE_NUMPY
    | orjson.OPT_APPEND_NEWLINE
)

CONSOLE_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>"
)
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}"


class PipelineError(Exception):
    """Error raised by a pipeline stage, carrying the process exit code"""

    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class UsageError(PipelineError):
    """Bad command-line arguments or configuration"""

    exit_code = 2


class DataError(PipelineError, ValueError):
    """Missing, malformed or unusable input data"""

    exit_code = 3


class TrainingDivergedError(DataError):
    """Training loss became non-finite"""


def setup_logging(level: str = "INFO", log_file: Optional[str] = None) -> None:
    """Configure the loguru sinks used by the command-line entry point"""
    logger.remove()
    # stdout carries command results
    logger.add(sys.stderr, format=CONSOLE_FORMAT, level=level)

    if log_file:
        logger.add(
            log_file,
            format=FILE_FORMAT,
            level=level,
            rotation="1 day",
            retention="30 days",
        )


def ensure_dir(path: PathLike) -> Path:
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def dump_json(path: PathLike, payload: Any) -> Path:
    """Write a JSON document with sorted keys and shortest round-trip floats"""
    target = Path(path)
    target.write_bytes(orjson.dumps(payload, option=JSON_OPTIONS))
    return target


def load_json(path: PathLike) -> Any:
    source = Path(path)
    try:
        return orjson.loads(source.read_bytes())
    except FileNotFoundError:
        raise DataError(f"File not found: {source}")
    except orjson.JSONDecodeError as e:
        raise DataError(f"Malformed JSON in {source}: {e}")


def digest_payload(payload: Any) -> str:
    """SHA-256 of the canonical JSON encoding of a payload"""
    encoded = orjson.dumps(payload, option=orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY)
    return hashlib.sha256(encoded).hexdigest()


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def spawn_rngs(seed: int, count: int) -> List[np.random.Generator]:
    """Independent generator streams derived from one seed"""
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.default_rng(child) for child in children]
