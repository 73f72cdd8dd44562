"""JSON run configuration: schema, defaults and validation.

Unknown keys are rejected at every level and errors carry the dotted key
path of the offending field.
"""

from __future__ import annotations

import json
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ContractError
from .seeding import MAX_SEED

COMMANDS = ("features-bench", "decay-bench", "train", "eval-baseline", "diagnostics")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class FeatureSettings(_Strict):
    """Feature map used by ``train`` and ``diagnostics``.

    ``variant``: ``paired-trig`` or ``phase-shifted`` random features, or
    ``nystrom``. ``measure`` picks the Nystrom landmark distribution;
    ``uniform-box`` draws landmarks uniformly from the embedded state box.
    """

    variant: Literal["paired-trig", "phase-shifted", "nystrom"] = "phase-shifted"
    m: int = Field(512, ge=1)
    n_nys: Optional[int] = Field(None, ge=1)
    alpha: float = Field(0.0, ge=0.0, lt=1.0)
    sigma: float = Field(1.0, gt=0.0)
    bandwidth: float = Field(2.0, gt=0.0)
    measure: Literal["gaussian-p-alpha", "uniform-box"] = "uniform-box"
    embed_angles: bool = True

    @model_validator(mode="after")
    def _nystrom_samples(self):
        if self.variant == "nystrom":
            n_nys = self.m if self.n_nys is None else self.n_nys
            if n_nys < self.m:
                raise ValueError(f"n_nys ({n_nys}) must be at least m ({self.m})")
            if self.alpha == 0.0:
                raise ValueError("nystrom features of the transition need alpha > 0")
        return self


class TrainSettings(_Strict):
    K: int = Field(150, ge=1)
    eta: Optional[float] = Field(None, gt=0.0)
    eta_scale: float = Field(0.05, gt=0.0)
    n: int = Field(1000, ge=1)
    gamma: float = Field(0.98, ge=0.0, lt=1.0)
    T: Optional[int] = Field(None, ge=0)
    ridge: Optional[float] = Field(None, ge=0.0)
    eval_every: int = Field(25, ge=1)
    eval_episodes: int = Field(100, ge=1)
    burn_in: int = Field(200, ge=0)
    stride: int = Field(10, ge=1)
    n_chains: int = Field(20, ge=1)
    grid_points: int = Field(15, ge=1)


class BaselineSettings(_Strict):
    controllers: list[Literal["ilqr", "energy", "zero"]] = ["ilqr", "energy", "zero"]
    episodes: int = Field(100, ge=1)
    ilqr_iters: int = Field(50, ge=0)
    barrier_weight: float = Field(1e-2, ge=0.0)
    k_e: float = Field(5.0, gt=0.0)
    theta_switch: float = Field(0.35, gt=0.0)


class BenchSettings(_Strict):
    """Kernel-approximation sweeps for ``features-bench`` and ``decay-bench``."""

    methods: list[Literal["rff", "nystrom"]] = ["nystrom", "rff"]
    d: int = Field(1, ge=1)
    sigma: float = Field(1.0, gt=0.0)
    alpha: float = Field(0.5, ge=0.0, lt=1.0)
    ms: list[int] = [16, 32, 64, 128, 256]
    n_nys: Optional[list[int]] = None
    seeds: int = Field(20, ge=1)
    n_eval: int = Field(200, ge=1)
    measure: Literal["gaussian-p-alpha", "uniform-box"] = "gaussian-p-alpha"

    @field_validator("ms")
    @classmethod
    def _positive(cls, v):
        if not v or any(m < 1 for m in v):
            raise ValueError("ms must be a non-empty list of positive integers")
        return v

    @model_validator(mode="after")
    def _check(self):
        if self.n_nys is not None:
            if len(self.n_nys) != len(self.ms):
                raise ValueError("n_nys must have one entry per m")
            for m, n in zip(self.ms, self.n_nys):
                if n < m:
                    raise ValueError(f"n_nys ({n}) must be at least m ({m})")
        if "nystrom" in self.methods and self.measure == "gaussian-p-alpha" and self.alpha == 0.0:
            raise ValueError("the gaussian-p-alpha landmark measure needs alpha > 0")
        return self


class RunConfig(_Strict):
    command: Literal["features-bench", "decay-bench", "train", "eval-baseline", "diagnostics"]
    env: Literal["pendulum", "cartpole", "pendubot", "drone2d"] = "pendulum"
    env_params: dict[str, float | int | str | list[float]] = {}
    features: FeatureSettings = FeatureSettings()
    train: TrainSettings = TrainSettings()
    baseline: BaselineSettings = BaselineSettings()
    bench: BenchSettings = BenchSettings()
    seed: int = Field(0, ge=0, le=MAX_SEED)
    output: Optional[str] = None


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def parse_config(text: str | bytes) -> RunConfig:
    """Parse and validate JSON text; raises :class:`ContractError` with key paths."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ContractError(f"malformed JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ContractError("config must be a JSON object")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ContractError(f"invalid config: {_format_errors(exc)}") from None


def serialize_config(cfg: RunConfig) -> str:
    """Canonical JSON with every default filled in."""
    return json.dumps(cfg.model_dump(mode="json"), sort_keys=True, indent=2)
