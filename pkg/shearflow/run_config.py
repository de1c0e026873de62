"""
Run configuration
shearflow/run_config.py

Flat INI-style file with the sections [problem] [mesh] [schedule] [solver]
[output]. Every section is validated by a pydantic model that rejects
unknown keys; all problems are collected into a single ConfigError that
names the key, the expected type and the line.

Example:
    [problem]
    g = 0.5
    alpha = 0.01
    z_d = vortex

    [mesh]
    nx = 16

    [schedule]
    deltas = 0.25, 0.05, 0.01, 0.002
"""

import configparser
import re
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from shearflow import fem
from shearflow import tensor_core as tc
from shearflow.adjoint_control import ControlProblem, OptimizerConfig, PathSchedule
from shearflow.benchmark import TARGETS, target_field
from shearflow.config import config
from shearflow.exceptions import ConfigError
from shearflow.fields import FeField, FieldRole
from shearflow.io_export import read_nodal_csv
from shearflow.logger import get_logger
from shearflow.mesh import build_structured_mesh, read_mesh
from shearflow.state_solver import SolverConfig

logger = get_logger(__name__)

DEFAULT_DELTA_FACTORS = (0.5, 0.1, 0.02, 0.004)
FORMATS = ("vtk", "csv", "json")
QUADRATURE_ORDERS = (2, 4, 5, 6)


def _split_list(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


# ============================================================================
# SECTION MODELS
# ============================================================================

class ProblemSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mu: float = Field(1.0, gt=0)
    nu: float = Field(1.0, gt=0)
    g: float = Field(0.5, gt=0)
    alpha: float = Field(1e-2, gt=0)
    z_d: str = "vortex"
    z_d_strength: float = Field(3.0, gt=0)
    control: str = "zero"
    control_strength: float = Field(1.0, gt=0)


class MeshSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    nx: int = Field(16, ge=1)
    ny: Optional[int] = Field(None, ge=1)
    file: Optional[str] = None


class ScheduleSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    deltas: Optional[List[float]] = None
    anchor: Literal["previous", "fixed"] = "previous"
    anchor_refinements: int = Field(0, ge=0)
    polish: bool = True

    @field_validator("deltas", mode="before")
    @classmethod
    def split_deltas(cls, value):
        return _split_list(value)


class SolverSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tol_residual: float = Field(default_factory=lambda: config.solver.TOL_RESIDUAL, gt=0)
    max_iters: int = Field(default_factory=lambda: config.solver.MAX_ITERS, ge=1)
    linesearch: float = Field(default_factory=lambda: config.solver.LINESEARCH, gt=0, lt=1)
    picard_relax: float = Field(default_factory=lambda: config.solver.PICARD_RELAX, gt=0, le=1)
    quadrature_order: int = 4
    semismooth: bool = True
    optimizer_max_iters: int = Field(default_factory=lambda: config.solver.OPTIMIZER_MAX_ITERS, ge=0)
    tol_grad: Optional[float] = Field(None, gt=0)

    @field_validator("quadrature_order")
    @classmethod
    def known_quadrature_order(cls, value: int) -> int:
        if value not in QUADRATURE_ORDERS:
            raise ValueError(f"quadrature order must be one of {QUADRATURE_ORDERS}")
        return value


class OutputSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directory: str = "runs/default"
    formats: List[Literal["vtk", "csv", "json"]] = Field(default_factory=lambda: list(FORMATS))
    seed: int = Field(default_factory=lambda: config.app.DEFAULT_SEED, ge=0)
    n_directions: int = Field(16, ge=0)
    report_band: Optional[float] = Field(None, gt=0)
    property_samples: int = Field(100_000, ge=1)

    @field_validator("formats", mode="before")
    @classmethod
    def split_formats(cls, value):
        return _split_list(value)


_SECTIONS = {
    "problem": ProblemSection,
    "mesh": MeshSection,
    "schedule": ScheduleSection,
    "solver": SolverSection,
    "output": OutputSection,
}


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    problem: ProblemSection = Field(default_factory=ProblemSection)
    mesh: MeshSection = Field(default_factory=MeshSection)
    schedule: ScheduleSection = Field(default_factory=ScheduleSection)
    solver: SolverSection = Field(default_factory=SolverSection)
    output: OutputSection = Field(default_factory=OutputSection)
    source: Optional[str] = None

    @property
    def deltas(self) -> List[float]:
        if self.schedule.deltas is not None:
            return list(self.schedule.deltas)
        return [f * self.problem.g for f in DEFAULT_DELTA_FACTORS]

    @property
    def params(self) -> tc.PlasticityParams:
        return tc.PlasticityParams(g=self.problem.g, mu=self.problem.mu, nu=self.problem.nu)

    def summary(self) -> Dict:
        return self.model_dump(exclude={"source"})


# ============================================================================
# PARSING
# ============================================================================

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s\[][^=:]*?)\s*[=:]")


def _line_index(text: str) -> Dict[Tuple[str, str], int]:
    """(section, key) -> 1-based line number; sections map under key ''"""
    index, section = {}, None
    for number, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip().lower()
            index.setdefault((section, ""), number)
            continue
        m = _KEY_RE.match(line)
        if m and section is not None:
            index.setdefault((section, m.group(1).strip().lower()), number)
    return index


_BOUNDS = ("gt", "ge", "lt", "le")


def _expected(model: type, key: str) -> str:
    info = model.model_fields.get(key)
    if info is None:
        return "no such key"
    annotation = info.annotation
    name = getattr(annotation, "__name__", None)
    text = name if name and "[" not in str(annotation) else str(annotation).replace("typing.", "")
    bounds = [f"{op} {getattr(m, op)}" for m in info.metadata for op in _BOUNDS if hasattr(m, op)]
    return text + (f" ({', '.join(bounds)})" if bounds else "")


def parse_config(path: Union[str, Path]) -> RunConfig:
    """
    Read and validate a run configuration.

    Raises:
        ConfigError: listing every invalid key with its expected type and line
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError([{"key": str(path), "line": None, "expected": "readable file",
                            "message": "configuration file not found"}])
    text = path.read_text(encoding="utf-8")
    lines = _line_index(text)

    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as e:
        raise ConfigError([{"key": getattr(e, "option", None) or getattr(e, "section", None) or "?",
                            "line": getattr(e, "lineno", None), "expected": "INI syntax",
                            "message": str(e).splitlines()[0]}]) from e

    problems: List[Dict] = []
    sections = {}
    for name in parser.sections():
        key = name.strip().lower()
        if key not in _SECTIONS:
            problems.append({"key": f"[{name}]", "line": lines.get((key, "")), "expected": f"one of {sorted(_SECTIONS)}",
                             "message": "unknown section"})
            continue
        raw = {k: v for k, v in parser.items(name)}
        model = _SECTIONS[key]
        try:
            sections[key] = model(**raw)
        except ValidationError as e:
            for err in e.errors():
                field_name = str(err["loc"][0]) if err["loc"] else "?"
                problems.append({
                    "key": f"{key}.{field_name}",
                    "line": lines.get((key, field_name)),
                    "expected": _expected(model, field_name),
                    "message": err["msg"],
                })

    if problems:
        raise ConfigError(problems)

    cfg = RunConfig(**sections, source=str(path))
    problems = _cross_checks(cfg, path.parent, lines)
    if problems:
        raise ConfigError(problems)
    logger.info(f"Loaded run configuration from {path}")
    return cfg


def _cross_checks(cfg: RunConfig, base: Path, lines) -> List[Dict]:
    problems = []
    g = cfg.problem.g
    deltas = cfg.deltas
    line = lines.get(("schedule", "deltas"))
    bad = [d for d in deltas if not 0 < d < g]
    if bad:
        problems.append({"key": "schedule.deltas", "line": line, "expected": f"0 < delta < g = {g}",
                         "message": f"regularization requires delta < g; offending values {bad}"})
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        problems.append({"key": "schedule.deltas", "line": line, "expected": "strictly decreasing list",
                         "message": "deltas must be strictly decreasing"})
    if not deltas:
        problems.append({"key": "schedule.deltas", "line": line, "expected": "non-empty list",
                         "message": "schedule needs at least one delta"})

    if cfg.mesh.file is not None and not _resolve(base, cfg.mesh.file).exists():
        problems.append({"key": "mesh.file", "line": lines.get(("mesh", "file")), "expected": "existing file",
                         "message": f"mesh file {cfg.mesh.file} not found"})

    for key in ("z_d", "control"):
        value = getattr(cfg.problem, key)
        if value not in TARGETS and not _resolve(base, value).exists():
            problems.append({"key": f"problem.{key}", "line": lines.get(("problem", key)),
                             "expected": f"one of {TARGETS} or an existing CSV path",
                             "message": f"unknown source {value!r}"})
    return problems


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


# ============================================================================
# BUILDERS
# ============================================================================

def _base_dir(cfg: RunConfig) -> Path:
    return Path(cfg.source).parent if cfg.source else Path(".")


def build_dofmap(cfg: RunConfig) -> fem.DofMap:
    if cfg.mesh.file is not None:
        mesh = read_mesh(_resolve(_base_dir(cfg), cfg.mesh.file))
    else:
        mesh = build_structured_mesh(cfg.mesh.nx, cfg.mesh.ny or cfg.mesh.nx)
    return fem.build_dofmap(mesh)


def _source_field(cfg: RunConfig, dofmap: fem.DofMap, value: str, strength: float) -> FeField:
    if value in TARGETS:
        return target_field(dofmap, value, cfg.problem.g, strength)
    coefs = read_nodal_csv(_resolve(_base_dir(cfg), value), dofmap)
    return FeField(dofmap, coefs, FieldRole.CONTROL)


def build_problem(cfg: RunConfig, dofmap: fem.DofMap) -> ControlProblem:
    z_d = _source_field(cfg, dofmap, cfg.problem.z_d, cfg.problem.z_d_strength)
    return ControlProblem(params=cfg.params, alpha=cfg.problem.alpha, z_d=z_d)


def build_control(cfg: RunConfig, dofmap: fem.DofMap) -> FeField:
    """Control used by solve-state; named shapes are scaled like targets"""
    return _source_field(cfg, dofmap, cfg.problem.control, cfg.problem.control_strength)


def solver_config(cfg: RunConfig) -> SolverConfig:
    s = cfg.solver
    return SolverConfig(tol_residual=s.tol_residual, max_iters=s.max_iters, linesearch=s.linesearch,
                        picard_relax=s.picard_relax, quadrature_order=s.quadrature_order, semismooth=s.semismooth)


def optimizer_config(cfg: RunConfig) -> OptimizerConfig:
    return OptimizerConfig(max_iters=cfg.solver.optimizer_max_iters, tol_grad=cfg.solver.tol_grad,
                           state=solver_config(cfg))


def path_schedule(cfg: RunConfig) -> PathSchedule:
    s = cfg.schedule
    return PathSchedule(cfg.deltas, anchor=s.anchor, anchor_refinements=s.anchor_refinements, polish=s.polish)
