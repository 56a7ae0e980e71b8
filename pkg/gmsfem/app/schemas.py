"""Pydantic schemas for run configuration and convergence records."""

import re
from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class FieldKind(str, Enum):
    """Permeability field sources."""
    UNIFORM = "uniform"
    FILE = "file"
    CHANNELS = "channels"


class SnapshotFamily(str, Enum):
    """Snapshot spaces for the local spectral problem."""
    HARMONIC = "harmonic"
    NODAL = "nodal"


class IndicatorKind(str, Enum):
    """Per-neighborhood error indicators."""
    L2 = "l2"
    H1W = "h1w"
    H1W_SNAP = "h1w-snap"
    EXACT = "exact"


class QFormula(str, Enum):
    """Residual used by the L2 indicator."""
    LOAD_FREE = "paper"  # W_i A R0^T U0, load term dropped
    CONSISTENT = "consistent"  # W_i (F - A R0^T U0)


class TerminationKind(str, Enum):
    """Stopping rules for the adaptive loop."""
    EXACT = "exact"
    EXACT_LITERAL = "exact-literal"
    TOL = "tol"
    TOL_REL = "tol-rel"
    ENERGY = "energy"
    MAX_DIM = "max-dim"
    MAX_ITER = "max-iter"


DEFAULT_INITIAL_BASIS = {
    SnapshotFamily.HARMONIC: 4,
    SnapshotFamily.NODAL: 2,
}


class TerminationRule(BaseModel):
    """Parsed form of `exact:0.05`, `tol:1e-8`, `tol-rel:1e-6`, `energy:8`, `max-dim:900`, `max-iter`."""
    model_config = ConfigDict(frozen=True)

    kind: TerminationKind = TerminationKind.EXACT
    value: Optional[float] = 0.05

    @model_validator(mode="after")
    def _check_value(self) -> "TerminationRule":
        if self.kind in (TerminationKind.EXACT, TerminationKind.EXACT_LITERAL):
            if self.value is None or not 0.0 < self.value < 1.0:
                raise ValueError("exact fraction p must lie in (0, 1)")
        elif self.kind in (TerminationKind.TOL, TerminationKind.TOL_REL, TerminationKind.ENERGY, TerminationKind.MAX_DIM):
            if self.value is None or self.value <= 0.0:
                raise ValueError(f"{self.kind.value} needs a positive value")
        return self

    @classmethod
    def parse(cls, text: str) -> "TerminationRule":
        kind, _, value = text.strip().partition(":")
        return cls(kind=TerminationKind(kind.strip()), value=float(value) if value else None)

    def __str__(self) -> str:
        if self.value is None:
            return self.kind.value
        return f"{self.kind.value}:{self.value!r}"


class FieldSpec(BaseModel):
    """How to obtain the permeability field kappa."""
    model_config = ConfigDict(frozen=True)

    kind: FieldKind = FieldKind.CHANNELS
    contrast: float = Field(1e4, ge=1.0)
    path: Optional[str] = None
    seed: int = 0
    n_horizontal: int = Field(2, ge=0)
    n_vertical: int = Field(2, ge=0)
    channel_width: int = Field(1, ge=1)  # in fine cells
    channel_rows: Optional[Tuple[int, ...]] = None  # fixed fine-cell rows, overrides seed
    channel_cols: Optional[Tuple[int, ...]] = None
    n_inclusions: int = Field(0, ge=0)
    inclusion_size: int = Field(2, ge=1)

    @model_validator(mode="after")
    def _check_path(self) -> "FieldSpec":
        if self.kind == FieldKind.FILE and not self.path:
            raise ValueError("file fields need a path")
        return self


class AdaptConfig(BaseModel):
    """Parameters of the adaptive enrichment loop."""
    model_config = ConfigDict(frozen=True)

    theta: float = Field(0.7, gt=0.0, lt=1.0)
    indicator: IndicatorKind = IndicatorKind.H1W
    snapshots: SnapshotFamily = SnapshotFamily.HARMONIC
    init_basis: Optional[int] = Field(None, ge=1)
    increment: int = Field(1, ge=1)
    gap_ratio: float = Field(1.0, ge=1.0)
    terminate: TerminationRule = Field(default_factory=TerminationRule)
    max_iter: int = Field(100, ge=0)
    q_formula: QFormula = QFormula.CONSISTENT
    mark_all: bool = False  # uniform-enrichment baseline
    snapshot_reference: bool = True  # compute u_snap for the *_vs_usnap columns
    timing: bool = True

    @property
    def initial_count(self) -> int:
        if self.init_basis is not None:
            return self.init_basis
        return DEFAULT_INITIAL_BASIS[self.snapshots]

    @property
    def needs_snapshot_solution(self) -> bool:
        exact = self.terminate.kind in (TerminationKind.EXACT, TerminationKind.EXACT_LITERAL)
        return exact or self.snapshot_reference


_PAIR = re.compile(r"^\s*(\d+)\s*[xX]\s*(\d+)\s*$")


def _parse_pair(value):
    if isinstance(value, str):
        match = _PAIR.match(value)
        if match:
            return int(match.group(1)), int(match.group(2))
        if value.strip().isdigit():
            return int(value), int(value)
        raise ValueError("expected NxM")
    if isinstance(value, int):
        return value, value
    return value


class RunConfig(BaseModel):
    """Everything a CLI run needs; the key = value file format maps onto these fields."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    coarse: Tuple[int, int] = (10, 10)
    sub: Tuple[int, int] = (5, 5)
    field: str = "channels"  # uniform | channels | path to a text matrix
    contrast: float = Field(1e4, ge=1.0)
    seed: int = 0
    n_horizontal: int = Field(2, ge=0)
    n_vertical: int = Field(2, ge=0)
    channel_width: int = Field(1, ge=1)
    n_inclusions: int = Field(0, ge=0)
    inclusion_size: int = Field(2, ge=1)
    forcing: float = 1.0
    theta: float = Field(0.7, gt=0.0, lt=1.0)
    indicator: IndicatorKind = IndicatorKind.H1W
    compare_with: IndicatorKind = IndicatorKind.L2
    snapshots: SnapshotFamily = SnapshotFamily.HARMONIC
    init_basis: Optional[int] = Field(None, ge=1)
    increment: int = Field(1, ge=1)
    gap_ratio: float = Field(1.0, ge=1.0)
    terminate: TerminationRule = Field(default_factory=TerminationRule)
    max_iter: int = Field(100, ge=0)
    per_node: Optional[int] = Field(None, ge=1)  # uniform subcommand
    q_formula: QFormula = QFormula.CONSISTENT
    mark_all: bool = False
    snapshot_reference: bool = True
    lift_a: float = 0.0
    lift_b: float = 0.0
    lift_c: float = 0.0
    out: str = "results"
    timing: bool = True

    @field_validator("coarse", "sub", mode="before")
    @classmethod
    def _pair(cls, value):
        return _parse_pair(value)

    @field_validator("coarse", "sub")
    @classmethod
    def _positive_pair(cls, value):
        if min(value) < 1:
            raise ValueError("counts must be >= 1")
        return value

    @field_validator("terminate", mode="before")
    @classmethod
    def _rule(cls, value):
        if isinstance(value, str):
            return TerminationRule.parse(value)
        return value

    def field_spec(self) -> FieldSpec:
        if self.field in (FieldKind.UNIFORM.value, FieldKind.CHANNELS.value):
            kind, path = FieldKind(self.field), None
        else:
            kind, path = FieldKind.FILE, self.field
        return FieldSpec(
            kind=kind,
            contrast=self.contrast,
            path=path,
            seed=self.seed,
            n_horizontal=self.n_horizontal,
            n_vertical=self.n_vertical,
            channel_width=self.channel_width,
            n_inclusions=self.n_inclusions,
            inclusion_size=self.inclusion_size,
        )

    def adapt_config(self, indicator: Optional[IndicatorKind] = None) -> AdaptConfig:
        return AdaptConfig(
            theta=self.theta,
            indicator=indicator or self.indicator,
            snapshots=self.snapshots,
            init_basis=self.init_basis,
            increment=self.increment,
            gap_ratio=self.gap_ratio,
            terminate=self.terminate,
            max_iter=self.max_iter,
            q_formula=self.q_formula,
            mark_all=self.mark_all,
            snapshot_reference=self.snapshot_reference,
            timing=self.timing,
        )

    @property
    def lifting(self) -> Tuple[float, float, float]:
        return self.lift_a, self.lift_b, self.lift_c


class IterationRecord(BaseModel):
    """One row of the convergence history."""
    iteration: int
    dim: int
    l2_vs_u: float
    h1_vs_u: float
    l2_vs_usnap: float
    h1_vs_usnap: float
    energy_error: float  # ||u - u_off||_V, absolute
    sum_eta2: float
    marked: int
    saturated: int
    effectivity: float
    energy_ratio: Optional[float] = None  # ||e_m||^2 / ||e_{m-1}||^2
    seconds: float = 0.0
    basis_counts: List[int] = Field(default_factory=list)
    local_energy: List[float] = Field(default_factory=list)


class ConvergenceHistory(BaseModel):
    """Full record of an adaptive (or uniform) run."""
    indicator: IndicatorKind
    snapshots: SnapshotFamily
    theta: float
    records: List[IterationRecord] = Field(default_factory=list)
    converged: bool = False
    stop_reason: str = ""
    snapshot_dim: int = 0
    snapshot_l2_error: float = float("nan")
    snapshot_h1_error: float = float("nan")

    @property
    def final(self) -> IterationRecord:
        return self.records[-1]

    @property
    def iterations(self) -> int:
        return len(self.records) - 1

    @property
    def dims(self) -> List[int]:
        return [r.dim for r in self.records]

    @property
    def h1_errors(self) -> List[float]:
        return [r.h1_vs_u for r in self.records]
