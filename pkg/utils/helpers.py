"""
Helper utilities for the Grasp Quality Lab
"""

import hashlib
import json
import logging
import os
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Union

import numpy as np
import pandas as pd
from dotenv import load_dotenv

load_dotenv()

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging() -> None:
    """Root logging setup shared by every entry point"""
    level = os.getenv("GF_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=level, format=LOG_FORMAT)


def setup_run_logger():
    """Setup logger for training and evaluation events"""
    log_dir = os.getenv("GF_LOG_DIR", "logs")
    # Create logs directory if it doesn't exist
    if not os.path.exists(log_dir):
        os.makedirs(log_dir)

    run_logger = logging.getLogger("run_events")
    run_logger.setLevel(logging.DEBUG)

    file_handler = logging.FileHandler(os.path.join(log_dir, "training.log"))
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(logging.Formatter(LOG_FORMAT))

    # Add handler to logger if it doesn't already have it
    if not run_logger.handlers:
        run_logger.addHandler(file_handler)
    else:
        file_handler.close()

    return run_logger


def log_training_event(kind: str, **fields: Any) -> None:
    """Log one structured event record to the run log"""
    run_logger = logging.getLogger("run_events")
    entry = {"timestamp": datetime.now().isoformat(), "event": kind}
    entry.update(fields)
    run_logger.debug(json.dumps(entry, default=str))


logger = logging.getLogger(__name__)


def thread_count() -> int:
    """Internal parallelism cap from GF_THREADS"""
    try:
        return max(1, int(os.getenv("GF_THREADS", "1")))
    except ValueError:
        logger.warning(f"Ignoring non-integer GF_THREADS={os.getenv('GF_THREADS')!r}")
        return 1


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for a (seed, key, ...) tuple, order-free by construction"""
    return np.random.default_rng([int(seed), *(int(key) for key in keys)])


def format_key_values(entries: Dict[str, str]) -> str:
    """Render `key=value` lines in insertion order"""
    return "".join(f"{key}={value}\n" for key, value in entries.items())


def parse_key_values(text: str) -> Dict[str, str]:
    """Inverse of format_key_values; blank lines and # comments are skipped"""
    entries: Dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line without '=': {line!r}")
        entries[key.strip()] = value.strip()
    return entries


def sha256_file(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(out_dir: Union[str, Path], files: Iterable[Union[str, Path]]) -> Path:
    """List every output file with its hash and size in manifest.csv"""
    out_dir = Path(out_dir)
    rows: List[Dict[str, Any]] = []
    for path in sorted(Path(p) for p in files):
        rows.append(
            {
                "file": path.relative_to(out_dir).as_posix(),
                "sha256": sha256_file(path),
                "bytes": path.stat().st_size,
            }
        )
    manifest = out_dir / "manifest.csv"
    pd.DataFrame(rows, columns=["file", "sha256", "bytes"]).to_csv(
        manifest, index=False, lineterminator="\n"
    )
    return manifest


def format_response_message(operation: str, files_written: int, errors: List[str] = None) -> str:
    """Format a one-line summary for the user"""
    if errors:
        return f"Completed {operation} writing {files_written} files with {len(errors)} errors."
    return f"Successfully completed {operation}, wrote {files_written} files."
