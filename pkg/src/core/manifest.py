"""
Run manifests.

Every command leaves manifest.json in its output directory: the resolved config, the seeds in
play, installed package versions, wall-clock seconds per stage and the SHA-256 digest of every
file the command wrote. Output paths are stored relative to the manifest's directory.
"""

import json
import os
import time
from contextlib import contextmanager
from importlib import metadata
from typing import Any, Dict, Iterable, List

from pydantic import BaseModel, Field

from ..errors import RejectedInputError
from ..utils.file_utils import atomic_write_text, file_digest
from ..utils.logger import app_logger as logger

MANIFEST_NAME = "manifest.json"

TRACKED_PACKAGES = (
    "numpy", "scipy", "pandas", "pydantic", "scikit-learn", "statsmodels", "click", "rich",
    "psutil", "setproctitle",
)


def package_versions() -> Dict[str, str]:
    versions = {}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "not installed"
    return versions


class RunManifest(BaseModel):
    command: str
    config: Dict[str, Any]
    seeds: Dict[str, int]
    versions: Dict[str, str] = Field(default_factory=package_versions)
    stages: Dict[str, float] = Field(default_factory=dict)
    outputs: Dict[str, str] = Field(default_factory=dict)


class StageTimer:
    """Collects wall-clock seconds per named stage."""

    def __init__(self):
        self.seconds: Dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[name] = self.seconds.get(name, 0.0) + time.perf_counter() - start
            logger.debug(f"Stage {name} took {self.seconds[name]:.2f}s")


def seeds_of(config) -> Dict[str, int]:
    return {
        "run": config.seed,
        "model": config.model.seed,
        "synthetic": config.synthetic.seed,
    }


def build_manifest(
    command: str,
    config_dict: Dict[str, Any],
    seeds: Dict[str, int],
    directory: str,
    outputs: Iterable[str],
    stages: Dict[str, float]
) -> RunManifest:
    """Manifest for a finished command; digests every output file now on disk."""
    digests = {}
    for path in sorted(set(outputs)):
        if not os.path.isfile(path):
            raise RejectedInputError(f"Declared output {path} was not written")
        digests[os.path.relpath(path, directory)] = file_digest(path)
    return RunManifest(command=command, config=config_dict, seeds=seeds, stages=dict(stages), outputs=digests)


def write_manifest(directory: str, manifest: RunManifest) -> str:
    path = os.path.join(directory, MANIFEST_NAME)
    atomic_write_text(path, json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
    logger.info(f"Manifest written to {path} ({len(manifest.outputs)} outputs)")
    return path


def read_manifest(directory: str) -> RunManifest:
    path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.isfile(path):
        raise RejectedInputError(f"No {MANIFEST_NAME} in {directory}")
    with open(path, "r", encoding="utf-8") as f:
        return RunManifest.model_validate(json.load(f))


def verify_manifest(directory: str) -> List[str]:
    """Outputs whose current digest no longer matches the manifest (empty when all verify)."""
    manifest = read_manifest(directory)
    problems = []
    for relative, expected in sorted(manifest.outputs.items()):
        path = os.path.join(directory, relative)
        if not os.path.isfile(path):
            problems.append(f"{relative}: missing")
        elif file_digest(path) != expected:
            problems.append(f"{relative}: digest mismatch")
    for problem in problems:
        logger.warning(f"Manifest check failed for {problem}")
    return problems
