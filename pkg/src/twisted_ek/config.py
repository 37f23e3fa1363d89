"""Experiment configuration: one JSON document, validated in full before any work starts."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .domains import DEFAULT_SEED

STAGES = ("structure", "envelope", "solve", "lemma", "dyadic", "holder", "rigidity")
NEEDS_SOLVE = ("dyadic", "holder")


class ConfigError(ValueError):
    """Unparseable or invalid configuration."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Equation(_Strict):
    preset: str
    params: dict[str, Any] = Field(default_factory=dict)


class Boundary(_Strict):
    # g = (a11 x^2 + 2 a12 x y + a22 y^2) / 2
    quadratic: tuple[float, float, float] = (0.6, 0.0, 0.3)


class Grid(_Strict):
    pointsPerSide: int = 65
    refinements: int = Field(0, ge=0, le=3)
    domain: Literal["square", "ball"] = "square"
    rhs: float = 0.0
    boundary: Boundary = Boundary()
    warmStart: Literal["coarse", "none"] = "coarse"
    fieldFormat: Literal["binary", "csv", "none"] = "binary"

    @field_validator("pointsPerSide")
    @classmethod
    def _odd(cls, v: int) -> int:
        if v < 5 or v % 2 == 0:
            raise ValueError("pointsPerSide must be odd and at least 5")
        if (v - 1) * 8 + 1 > 2049:
            raise ValueError("pointsPerSide is too large for desk-scale runs")
        return v


class StructureOptions(_Strict):
    trials: int = Field(200, ge=1)


class EnvelopeOptions(_Strict):
    nMinorants: int = Field(400, ge=1)
    nBaseSamples: int | None = Field(None, ge=1)
    family: Literal["tangent", "block"] = "tangent"
    trials: int = Field(500, ge=1)
    refinementFrom: int = Field(100, ge=1)


class LemmaOptions(_Strict):
    trials: int = Field(1000, ge=1)


class DyadicOptions(_Strict):
    xi: float = Field(0.05, gt=0)
    kMax: int = Field(4, ge=1)
    etas: tuple[float, ...] = (1.0, 0.5, 0.25)


class HolderOptions(_Strict):
    alpha: float = Field(0.5, gt=0, lt=1)
    radius: float = Field(0.5, gt=0, le=1)


class RigidityOptions(_Strict):
    function: Literal["quadratic", "bump", "oscillating"] = "bump"
    R: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    alpha: float = Field(0.5, gt=0, lt=1)
    points: int = 129


class Options(_Strict):
    structure: StructureOptions = StructureOptions()
    envelope: EnvelopeOptions = EnvelopeOptions()
    lemma: LemmaOptions = LemmaOptions()
    dyadic: DyadicOptions = DyadicOptions()
    holder: HolderOptions = HolderOptions()
    rigidity: RigidityOptions = RigidityOptions()


class Tolerances(_Strict):
    residualTol: float = Field(1e-10, gt=0)
    lemmaSign: float = Field(1e-12, ge=0)
    sandwich: float = Field(1e-2, ge=0)
    envelopeGap: float = Field(1e-2, gt=0)
    envelopeRefinement: float = Field(1.5, ge=1)
    supersolutionFactor: float = Field(1.5, ge=1)
    dyadicSlack: float = Field(1e-10, ge=0)
    dyadicIdentity: float = Field(1e-8, ge=0)
    holderVariation: float = Field(0.25, ge=0)
    quadResidual: float = Field(1e-10, gt=0)
    rigidityGrowth: float = Field(0.10, ge=0)


class ExperimentConfig(_Strict):
    equation: Equation
    grid: Grid = Grid()
    checks: tuple[Literal[STAGES], ...] = ("structure",)  # type: ignore[valid-type]
    options: Options = Options()
    tolerances: Tolerances = Tolerances()
    seed: int = DEFAULT_SEED
    output: str | None = None

    @model_validator(mode="after")
    def _operator_builds(self):
        from .operators import make_operator

        make_operator(self.equation.preset, **self.equation.params)
        return self

    def stages(self) -> list[str]:
        """Requested stages in dependency order, adding the solve a later stage needs."""
        wanted = set(self.checks)
        if wanted & set(NEEDS_SOLVE):
            wanted.add("solve")
        return [s for s in STAGES if s in wanted]


def _describe(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"])
        if e["type"] == "extra_forbidden":
            parts.append(f"unknown key {loc!r}")
        else:
            parts.append(f"{loc or 'config'}: {e['msg']}")
    return "; ".join(parts)


def parse_config(data: dict | str) -> ExperimentConfig:
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parse_config(text)
