"""
Configuration document models for the FD-DLM augmented Lagrangian toolkit.

Contains the problem, preconditioner, solver and experiment configurations.
Experiment documents are JSON files whose keys mirror these field names.
"""
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.config import settings

Geometry = Literal["square_in_square", "disk_in_square", "unit_square_41"]
Forcing = Literal["constant", "sin_tanh"]
BoundaryCondition = Literal["dirichlet_zero", "neumann_zero"]
Variant = Literal["ideal_al", "inexact_al", "mal", "mal_diag", "baseline_triangular", "none"]
WMode = Literal["exact", "diag"]
InnerSolver = Literal["exact", "cg_amg"]

# Variants operating on W = M² exactly; the others use diag(M²)
EXACT_W_VARIANTS = ("ideal_al", "mal", "baseline_triangular", "none")
DIRICHLET_ONLY_VARIANTS = ("ideal_al", "inexact_al", "baseline_triangular")


class ProblemConfig(BaseModel):
    """One discrete interface problem: geometry, refinement pair, coefficients, data."""
    model_config = ConfigDict(frozen=True)

    geometry: Geometry = "unit_square_41"
    bg_cells: int = Field(32, ge=1)
    # cells per side for a square immersed domain, refinement level for the disk
    immersed: int = Field(8, ge=0)
    beta: float = 1.0
    beta2: float = 100.0
    forcing: Forcing = "constant"
    bc: BoundaryCondition = "dirichlet_zero"
    quad_order: int = Field(default_factory=lambda: settings.coupling_quad_order, ge=2)

    def cache_key(self) -> str:
        return self.model_dump_json()


class PreconditionerSpec(BaseModel):
    """Preconditioner variant plus its augmentation and inner-solve parameters."""
    model_config = ConfigDict(frozen=True)

    variant: Variant = "mal_diag"
    gamma: float = 10.0
    gamma1: float = 10.0
    gamma2: float = 1e-2
    inner_solver: Optional[InnerSolver] = None
    inner_rtol: float = Field(default_factory=lambda: settings.inner_rtol, gt=0)
    inner_maxit: int = Field(default_factory=lambda: settings.inner_maxit, ge=1)

    @model_validator(mode="after")
    def _check_parameters(self):
        if self.variant in ("ideal_al", "inexact_al") and self.gamma <= 0:
            raise ValueError(f"{self.variant} requires gamma > 0")
        if self.variant in ("mal", "mal_diag") and (self.gamma1 <= 0 or self.gamma2 <= 0):
            raise ValueError(f"{self.variant} requires gamma1 > 0 and gamma2 > 0")
        if self.variant == "mal" and self.inner_solver == "cg_amg":
            raise ValueError("mal uses exact W = M^2 and therefore exact inner solves")
        if self.variant == "inexact_al" and self.inner_solver == "exact":
            raise ValueError("inexact_al solves the augmented block with CG + AMG")
        return self

    @property
    def w_mode(self) -> WMode:
        return "exact" if self.variant in EXACT_W_VARIANTS else "diag"

    @property
    def gammas(self) -> Tuple[float, float]:
        """(gamma1, gamma2) used to augment the system for this variant."""
        if self.variant in ("ideal_al", "inexact_al"):
            return self.gamma, self.gamma
        if self.variant in ("mal", "mal_diag"):
            return self.gamma1, self.gamma2
        return 0.0, 0.0

    @property
    def resolved_inner_solver(self) -> InnerSolver:
        if self.inner_solver is not None:
            return self.inner_solver
        return "exact" if self.variant in ("ideal_al", "mal", "baseline_triangular") else "cg_amg"


class SolverOptions(BaseModel):
    """Outer Krylov parameters; ``restart`` defaults per variant when omitted."""
    model_config = ConfigDict(frozen=True)

    rtol: float = Field(default_factory=lambda: settings.outer_rtol, gt=0)
    atol: float = Field(default_factory=lambda: settings.outer_atol, ge=0)
    restart: Optional[int] = Field(None, ge=1)
    maxit: int = Field(default_factory=lambda: settings.outer_maxit, ge=1)
    raise_on_failure: bool = True

    def restart_for(self, variant: Variant) -> int:
        if self.restart is not None:
            return self.restart
        return settings.baseline_restart if variant == "baseline_triangular" else settings.outer_restart


class SpectrumSettings(BaseModel):
    """Parameters of the ``spectrum`` and ``verify`` drivers."""
    gammas: List[float] = Field(default_factory=lambda: [1.0, 10.0, 100.0])
    variants: List[Variant] = Field(default_factory=lambda: ["ideal_al"])
    mal_pairs: List[Tuple[float, float]] = Field(default_factory=lambda: [(10.0, 1e-2), (100.0, 1e-3)])
    limit_pairs: List[Tuple[float, float]] = Field(
        default_factory=lambda: [(1e3, 1e-3), (1e4, 1e-4), (1e5, 1e-5)]
    )
    samples: int = Field(50, ge=1)
    one_tol: float = Field(default_factory=lambda: settings.eig_one_tol, gt=0)


class ExperimentConfig(BaseModel):
    """A sweep over refinement pairs and jump coefficients for one variant."""
    name: str = "experiment"
    geometry: Geometry = "square_in_square"
    refinement_levels: List[Tuple[int, int]] = Field(min_length=1)
    beta: float = 1.0
    beta2_list: List[float] = Field(min_length=1)
    variant: Variant = "mal_diag"
    compare_variants: List[Variant] = Field(default_factory=list)
    gamma: float = 10.0
    gamma1: float = 10.0
    gamma2: float = 1e-2
    gamma2_fallback: Optional[float] = None
    forcing: Forcing = "constant"
    bc: BoundaryCondition = "dirichlet_zero"
    quad_order: int = Field(default_factory=lambda: settings.coupling_quad_order, ge=2)
    rtol: float = Field(default_factory=lambda: settings.outer_rtol, gt=0)
    atol: float = Field(default_factory=lambda: settings.outer_atol, ge=0)
    restart: Optional[int] = None
    maxit: int = Field(default_factory=lambda: settings.outer_maxit, ge=1)
    inner_rtol: float = Field(default_factory=lambda: settings.inner_rtol, gt=0)
    inner_maxit: int = Field(default_factory=lambda: settings.inner_maxit, ge=1)
    fail_fatal: bool = False
    out_dir: Optional[str] = None
    threads: int = Field(1, ge=1)
    seed: int = Field(default_factory=lambda: settings.seed)
    spectrum: SpectrumSettings = Field(default_factory=SpectrumSettings)

    @model_validator(mode="after")
    def _check_jumps(self):
        bad = [b2 for b2 in self.beta2_list if not b2 > self.beta]
        if bad or self.beta <= 0:
            raise ValueError(f"every beta2 must exceed beta = {self.beta} > 0, got {bad}")
        return self

    def problem(self, level: Tuple[int, int], beta2: float) -> ProblemConfig:
        bg_cells, immersed = level
        return ProblemConfig(
            geometry=self.geometry,
            bg_cells=bg_cells,
            immersed=immersed,
            beta=self.beta,
            beta2=beta2,
            forcing=self.forcing,
            bc=self.bc,
            quad_order=self.quad_order,
        )

    def preconditioner(self, variant: Optional[Variant] = None,
                       gamma2: Optional[float] = None) -> PreconditionerSpec:
        return PreconditionerSpec(
            variant=variant or self.variant,
            gamma=self.gamma,
            gamma1=self.gamma1,
            gamma2=self.gamma2 if gamma2 is None else gamma2,
            inner_rtol=self.inner_rtol,
            inner_maxit=self.inner_maxit,
        )

    def solver(self) -> SolverOptions:
        return SolverOptions(rtol=self.rtol, atol=self.atol, restart=self.restart,
                             maxit=self.maxit, raise_on_failure=True)
