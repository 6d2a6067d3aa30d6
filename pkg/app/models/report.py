"""
Report models for the FD-DLM augmented Lagrangian toolkit.

Contains eigenvalue results, solve/spectrum/inf-sup reports and the
benchmark result tables.
"""
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

DAGGER = "†"


class EigenResult(BaseModel):
    """Eigenvalues (complex), optional eigenvectors as columns, per-value convergence flags."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    eigenvalues: np.ndarray
    eigenvectors: Optional[np.ndarray] = None
    converged: np.ndarray

    @property
    def real(self) -> np.ndarray:
        return np.real(self.eigenvalues)


class SolveReport(BaseModel):
    """Outcome of an outer (or standalone inner) Krylov solve."""
    variant: str = "none"
    iterations: int = 0
    converged: bool = False
    residual_history: List[float] = Field(default_factory=list)
    inner_iterations_total: int = 0
    inner_iterations_avg: float = 0.0
    inner_solves: int = 0
    inner_failures: int = 0
    wall_time: float = 0.0
    setup_time: float = 0.0
    original_residual: Optional[float] = None
    constraint_residual: Optional[float] = None

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else float("nan")


class SolveResult(BaseModel):
    """Solution blocks of the interface problem with the solve report."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    u: np.ndarray
    u2: np.ndarray
    lam: np.ndarray
    report: SolveReport


class SpectrumReport(BaseModel):
    """Eigenvalue list with the cluster statistics used by the spectral checks."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    eigenvalues: np.ndarray
    count_at_one: int
    eta: Optional[float] = None
    max_imag: float
    max_real: float
    min_real: float
    one_tol: float
    eta_lower_bound: Optional[float] = None
    metadata: Dict[str, Union[float, int, str]] = Field(default_factory=dict)

    def fraction_near_one(self, radius: float = 0.1) -> float:
        if self.eigenvalues.size == 0:
            return 0.0
        return float(np.mean(np.abs(self.eigenvalues - 1.0) < radius))

    def summary(self) -> Dict[str, Union[float, int, str, None]]:
        """JSON-friendly view without the eigenvalue list."""
        data = self.model_dump(exclude={"eigenvalues"})
        data["size"] = int(self.eigenvalues.size)
        data["fraction_near_one"] = self.fraction_near_one()
        return data


class InfSupReport(BaseModel):
    """Smallest positive eigenvalue of the inf-sup pencil and its kernel size."""
    sigma1: float
    zero_count: int
    expected_zero_count: int
    c1: float
    theta_bar_sq: float


class CheckResult(BaseModel):
    """One PASS/FAIL line of the ``verify`` driver."""
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""


class ResultRow(BaseModel):
    """Table row: dimensions plus one cell per beta2 and the inner average."""
    n: int
    m: int
    ell: int
    cells: List[str]
    inner_avg: str = "-"

    @property
    def dof_string(self) -> str:
        return f"{self.n}+{self.m}+{self.ell}"

    @property
    def total_dofs(self) -> int:
        return self.n + self.m + self.ell


class ResultTable(BaseModel):
    """Iteration-count table laid out as rows of DoF and columns of beta2."""
    caption: str = ""
    beta2_list: List[float]
    rows: List[ResultRow] = Field(default_factory=list)

    @property
    def column_count(self) -> int:
        return len(self.beta2_list) + 2

    def header(self) -> List[str]:
        return ["DoF"] + [f"beta2={b!r}" for b in self.beta2_list] + ["Inner"]

    def sorted_rows(self) -> List[ResultRow]:
        return sorted(self.rows, key=lambda row: row.total_dofs)


class TimingRecord(BaseModel):
    """Wall-clock measurement for one sweep cell (kept out of the result tables)."""
    level: Tuple[int, int]
    beta2: float
    variant: str
    dofs: int
    iterations: int
    converged: bool
    wall_time: float
    setup_time: float
    inner_avg: float


class ExperimentRun(BaseModel):
    """A finished sweep: the result table plus its timing log."""
    table: ResultTable
    timings: List[TimingRecord] = Field(default_factory=list)
    failures: int = 0


class ConvergenceReport(BaseModel):
    """L² differences between consecutive refinement levels and observed orders."""
    levels: List[Tuple[int, int]]
    dofs: List[int]
    l2_differences: List[float]
    orders: List[float]
