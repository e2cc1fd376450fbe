"""Pydantic models for every validated input of a simulation run."""

import math
from typing import Any, ClassVar, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# --- Base Model ---

class SectionModel(BaseModel):
    """Base for one `[section]` of the run configuration."""
    model_config = ConfigDict(extra="forbid", frozen=True)

# --- Section Models ---

class GridSpec(SectionModel):
    """Channel geometry: periodic in x, walls at y=0 and y=ly."""
    nx: int = Field(64, ge=8, description="Cell count in x")
    ny: int = Field(64, ge=8, description="Cell count in y")
    lx: float = Field(1.0, gt=0, description="Channel length (periodic direction)")
    ly: float = Field(1.0, gt=0, description="Channel height (wall to wall)")


class SchemeParams(SectionModel):
    """Time step, regularization levels and tolerances of the splitting scheme."""
    dt: float = Field(1e-4, gt=0, description="Time step")
    eps: float = Field(0.05, ge=0, description="Mollification and truncation level, 0 disables both")
    delta: float = Field(1e-3, ge=0, description="Weight of the parabolic term in the chemical potential")
    theta: float = Field(1.0, ge=0.5, le=1.0, description="Implicitness of the viscous term")
    div_tol: float = Field(1e-10, gt=0, description="Max-norm tolerance on the discrete divergence")
    trace_tol: float = Field(1e-8, gt=0, description="Max-norm tolerance on psi - trace(phi)")
    blowup_guard: float = Field(1e6, gt=0, description="Largest admissible L2 norm of any field")
    viscosity: float = Field(1.0, gt=0, description="Viscosity nu0")
    interface: float = Field(1.0, gt=0, description="Interface coefficient nu1 in front of -Laplace(phi)")
    alpha: float = Field(1.0, ge=0, description="Weight of the bulk potential in the chemical potential")
    v2_weight: float = Field(0.0, ge=0, description="Weight of the V2 norm inside the supermartingale process")
    pairing: Literal["velocity", "phase"] = Field("velocity", description="Field paired with h in the quadratic-variation compensator")

    @field_validator("eps")
    @classmethod
    def eps_at_most_one(cls, value: float) -> float:
        if value > 1.0:
            raise ValueError("eps must lie in [0, 1]")
        return value


class NoiseSpec(SectionModel):
    """Truncated cylindrical Wiener process and the multiplicative intensity h."""
    enabled: bool = True
    n_modes: int = Field(16, ge=1, description="Number of retained modes K")
    sigma0: float = Field(0.5, ge=0, description="Leading mode amplitude")
    gamma: float = Field(1.0, gt=0.5, description="Amplitude decay exponent, sigma_k = sigma0 * k**-gamma")
    alpha_u: float = Field(1.0, description="Coupling of h to the velocity")
    alpha_phi: float = Field(0.1, description="Coupling of h to grad(phi)")
    additive: float = Field(0.0, ge=0, description="Optional additive intensity")


class PotentialSpec(SectionModel):
    """Polynomial bulk potential f and boundary potential g.

    Coefficients are listed in increasing powers of r and describe f (resp. g),
    the primitives F and G being fixed by F(0) = G(0) = 0.
    """
    kind: Literal["double_well", "custom"] = "double_well"
    coefficients: Optional[Tuple[float, ...]] = None
    boundary_kind: Literal["linear", "double_well", "custom"] = "linear"
    boundary_coefficients: Optional[Tuple[float, ...]] = None
    truncation_scale: float = Field(1.0, gt=0, description="M(eps) = truncation_scale / eps")

    @field_validator("coefficients", "boundary_coefficients", mode="before")
    @classmethod
    def split_coefficients(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(float(part) for part in value.split(",") if part.strip())
        if isinstance(value, (int, float)):
            return (float(value),)
        return value

    @model_validator(mode="after")
    def custom_needs_coefficients(self) -> "PotentialSpec":
        if self.kind == "custom" and not self.coefficients:
            raise ValueError("kind = custom requires coefficients")
        if self.boundary_kind == "custom" and not self.boundary_coefficients:
            raise ValueError("boundary_kind = custom requires boundary_coefficients")
        return self


class CutoffParams(SectionModel):
    """Smooth cut-off radius and the norm combination watched by the stopping-time detector."""
    radius: float = Field(math.inf, gt=0, description="Cut-off radius R, inf disables the cut-off")
    monitor: Literal["combined", "either", "velocity"] = "combined"


class EnsembleConfig(SectionModel):
    """Monte Carlo plumbing."""
    n_paths: int = Field(1, ge=1)
    base_seed: int = Field(0, ge=0, lt=2**64)
    record_every: int = Field(10, ge=1, description="Step stride between recorded samples")
    max_workers: int = Field(1, ge=1, description="Worker processes, 1 runs paths in-process")
    exclusion_limit: float = Field(0.05, ge=0, le=1, description="Excluded-path fraction above which tests are inconclusive")


class InitialCondition(SectionModel):
    """Named initial-condition generator and its parameters."""
    kind: Literal["zero", "cosine", "interface", "random_smooth", "shear"] = "cosine"
    amplitude: float = Field(0.1, description="Phase amplitude (cosine, random_smooth)")
    mode: int = Field(1, ge=0, description="Wavenumber of the cosine profile in x")
    y_mode: int = Field(0, ge=0, description="Wavenumber of the cosine profile in y")
    radius: float = Field(0.25, gt=0, description="Drop radius (interface)")
    width: float = Field(0.05, gt=0, description="Interface width (interface)")
    velocity: float = Field(0.0, description="Shear amplitude U, used by every kind")
    modes: int = Field(4, ge=1, description="Highest retained wavenumber (random_smooth)")
    seed: int = Field(0, ge=0, description="Seed of the random_smooth generator")


class OutputSpec(SectionModel):
    """Where and how often results are written. Not part of the config hash."""
    directory: str = "schns_output"
    steps: int = Field(1000, ge=0, description="Number of time steps per path")
    checkpoint_every: int = Field(0, ge=0, description="Checkpoint stride in steps, 0 disables")
    csv_name: str = "series.csv"


class RunConfig(SectionModel):
    """Complete validated run configuration."""
    SECTIONS: ClassVar[Tuple[str, ...]] = (
        "grid", "scheme", "noise", "potential", "cutoff", "ensemble", "initial", "output",
    )

    grid: GridSpec = Field(default_factory=GridSpec)
    scheme: SchemeParams = Field(default_factory=SchemeParams)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    potential: PotentialSpec = Field(default_factory=PotentialSpec)
    cutoff: CutoffParams = Field(default_factory=CutoffParams)
    ensemble: EnsembleConfig = Field(default_factory=EnsembleConfig)
    initial: InitialCondition = Field(default_factory=InitialCondition)
    output: OutputSpec = Field(default_factory=OutputSpec)

# --- Command Argument Models ---

class CommandArgs(BaseModel):
    """Validated arguments shared by every command handler."""
    model_config = ConfigDict(frozen=True)

    config: RunConfig = Field(default_factory=RunConfig)


class ResumeArgs(CommandArgs):
    checkpoint: str = Field(..., description="Checkpoint file to resume from")


class VerifyArgs(CommandArgs):
    suites: Optional[Tuple[str, ...]] = Field(None, description="Suites to run, all when omitted")
    grid_size: int = Field(16, ge=8, le=64, description="Cells per direction of the verification grid")
