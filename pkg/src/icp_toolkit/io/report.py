"""JSON run reports written by the command-line tools."""

import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Optional, Union

from ..core.errors import CloudIoError, ParseError
from ..core.icp import IcpResult
from .clouds import read_text

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class RunReport:
    """One invocation's record. Optional sections are left out of the JSON when unset.

    ``rotation`` is row-major 3x3, ``translation`` a 3-vector, ``timings`` in
    milliseconds per stage.
    """

    tool: str
    version: str
    command: str
    config: dict[str, Any]
    termination: Optional[str] = None
    iterations: Optional[int] = None
    error_trace: Optional[list[float]] = None
    rotation: Optional[list[list[float]]] = None
    translation: Optional[list[float]] = None
    timings: Optional[dict[str, float]] = None
    correspondences: Optional[int] = None
    levels: Optional[list[int]] = None
    slam: Optional[dict[str, Any]] = None
    beliefs: Optional[list[list[float]]] = None
    bench: Optional[dict[str, Any]] = None

    @classmethod
    def from_icp(cls, tool: str, version: str, config: dict[str, Any], result: IcpResult) -> "RunReport":
        return cls(
            tool=tool,
            version=version,
            command="register",
            config=config,
            termination=result.termination.value,
            iterations=result.iterations,
            error_trace=[float(e) for e in result.error_trace],
            rotation=result.transform.rotation.tolist(),
            translation=result.transform.translation.tolist(),
            timings=dict(result.timings),
            correspondences=len(result.final_correspondences),
            levels=list(result.levels),
        )

    def to_dict(self) -> dict[str, Any]:
        return {key: value for key, value in asdict(self).items() if value is not None}

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunReport":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParseError(f"unknown report keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ParseError(f"incomplete report: {exc}") from exc

    @classmethod
    def parse(cls, text: str) -> "RunReport":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, line=exc.lineno) from exc
        if not isinstance(data, dict):
            raise ParseError("a report must be a JSON object")
        return cls.from_dict(data)

    def save(self, path: PathLike) -> Path:
        """Write through a temporary sibling file, then replace the target."""
        target = Path(path)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            temp_file = target.with_suffix(target.suffix + ".tmp")
            with open(temp_file, "w", encoding="utf-8") as f:
                f.write(self.serialize())
            temp_file.replace(target)
        except OSError as exc:
            raise CloudIoError(f"failed to save report {target}: {exc}") from exc
        logger.info("report written to %s", target)
        return target

    @classmethod
    def load(cls, path: PathLike) -> "RunReport":
        return cls.parse(read_text(path))

    def without_timings(self) -> dict[str, Any]:
        """The report minus wall-clock fields, for determinism checks."""
        data = self.to_dict()
        data.pop("timings", None)
        if "bench" in data:
            data["bench"] = {k: v for k, v in data["bench"].items() if k != "timings"}
        if "slam" in data:
            slam = dict(data["slam"])
            slam["frames"] = [{k: v for k, v in f.items() if k != "latency_ms"} for f in slam.get("frames", [])]
            data["slam"] = slam
        return data
