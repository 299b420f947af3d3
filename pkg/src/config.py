"""
Run configuration assembled from command-line flags and environment
"""

import logging
import os
from pathlib import Path
from typing import List, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from src.errors import ConfigError
from src.stats import DEFAULT_ALPHA_GRID

logger = logging.getLogger("topoprobe.config")

SEED_ENV = "TOPOPROBE_SEED"
OUT_DIR_ENV = "TOPOPROBE_OUT_DIR"
BACKENDS = ("sim",)


class RunConfig(BaseModel):
    """Everything one topoprobe run needs"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    device: str = "synthetic-h100"
    seed: int = Field(default=0, ge=0)
    alpha_grid: Tuple[float, ...] = DEFAULT_ALPHA_GRID
    write_json: bool = False
    write_markdown: bool = False
    write_raw: bool = False
    write_graphs: bool = False
    quiet: bool = False
    only: Optional[List[str]] = None
    out_dir: Path = Path(".")
    timestamp: bool = True
    backend: str = "sim"
    workers: int = Field(default=1, ge=1)
    scale: Optional[int] = Field(default=None, ge=1)
    debug: bool = False

    @field_validator("alpha_grid")
    @classmethod
    def _check_alpha_grid(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if not value:
            raise ValueError("at least one alpha is required")
        if any(not 0.0 < a < 1.0 for a in value):
            raise ValueError(f"alpha values must lie in (0, 1): {value}")
        return tuple(sorted(set(value)))

    @field_validator("backend")
    @classmethod
    def _check_backend(cls, value: str) -> str:
        if value not in BACKENDS:
            raise ValueError(f"unsupported backend {value!r}; available: {', '.join(BACKENDS)}")
        return value

    @field_validator("only")
    @classmethod
    def _check_only(cls, value: Optional[List[str]]) -> Optional[List[str]]:
        if value is not None and (not value or any(not name for name in value)):
            raise ValueError("--only needs element names")
        return value

    @property
    def writes_files(self) -> bool:
        return self.write_json or self.write_markdown or self.write_raw or self.write_graphs

    @property
    def json_to_stdout(self) -> bool:
        """The report goes to stdout unless it is written to a file"""
        return not self.write_json

    @classmethod
    def from_args(cls, args, environ: Optional[Mapping[str, str]] = None) -> "RunConfig":
        """
        Build a config from parsed arguments

        Unset flags fall back to TOPOPROBE_SEED / TOPOPROBE_OUT_DIR, then to the
        defaults.

        Raises:
            ConfigError: invalid values
        """
        environ = os.environ if environ is None else environ
        seed = args.seed
        if seed is None and environ.get(SEED_ENV):
            try:
                seed = int(environ[SEED_ENV])
            except ValueError as e:
                raise ConfigError(f"{SEED_ENV} must be an integer: {e!s}") from e
        out_dir = args.out_dir or environ.get(OUT_DIR_ENV) or "."

        values = {
            "device": args.device,
            "seed": seed if seed is not None else 0,
            "write_json": args.json,
            "write_markdown": args.markdown,
            "write_raw": args.raw,
            "write_graphs": args.graphs,
            "quiet": args.quiet,
            "only": args.only,
            "out_dir": Path(out_dir),
            "timestamp": not args.no_timestamp,
            "backend": args.backend,
            "workers": args.workers,
            "scale": args.scale,
            "debug": args.debug,
        }
        if args.alpha:
            values["alpha_grid"] = tuple(args.alpha)
        try:
            return cls(**values)
        except ValidationError as e:
            problems = "; ".join(
                f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
            )
            raise ConfigError(f"Invalid configuration: {problems}") from e
