"""
Report Writing
JSON and CSV artifacts carrying the resolved configuration and input content hashes
"""

import hashlib
import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Union
import numpy as np
import pandas as pd
from src.core.errors import error_handler
from src.core.structured_logging import get_structured_logger

logger = get_structured_logger(__name__)


def content_hash(data: Union[bytes, str]) -> str:
    """Hash of a blob as computed by `git hash-object`"""
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def file_hash(path: Union[str, Path]) -> str:
    try:
        return content_hash(Path(path).read_bytes())
    except OSError as e:
        raise error_handler.handle_os_error(e, path) from e


def _jsonable(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


def dumps(document: Any) -> str:
    return json.dumps(_jsonable(document), indent=2, sort_keys=True) + "\n"


class ReportWriter:
    """Writes reports under one output directory"""

    def __init__(self, output_dir: Union[str, Path], config: Optional[Mapping[str, Any]] = None,
                 inputs: Optional[Mapping[str, str]] = None):
        self.output_dir = Path(output_dir)
        self.config = dict(config or {})
        self.inputs: Dict[str, str] = dict(inputs or {})

    def add_input(self, name: str, digest: str) -> None:
        self.inputs[name] = digest

    def _path(self, name: str) -> Path:
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise error_handler.handle_os_error(e, self.output_dir) from e
        return self.output_dir / name

    def write_json(self, name: str, result: Any, embed: bool = True) -> Path:
        """Write result; with embed the document also carries the config and input hashes"""
        document = {"config": self.config, "inputs": self.inputs, "result": result} if embed else result
        path = self._path(name)
        try:
            path.write_text(dumps(document), encoding="utf-8")
        except OSError as e:
            raise error_handler.handle_os_error(e, path) from e
        logger.info("report_written", path=str(path), format="json")
        return path

    def write_csv(self, name: str, rows: Union[pd.DataFrame, Iterable[Mapping[str, Any]]],
                  float_format: str = "%.10g") -> Path:
        frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
        path = self._path(name)
        try:
            frame.to_csv(path, index=False, float_format=float_format)
        except OSError as e:
            raise error_handler.handle_os_error(e, path) from e
        logger.info("report_written", path=str(path), format="csv", rows=len(frame))
        return path
