"""
Spectral laboratory for the FD-DLM augmented Lagrangian toolkit.

Dense, desk-scale checks of the preconditioned spectra: clustering at one
and the lower bound η for the ideal preconditioner, the algebraic inf-sup
constant, the Sherman–Morrison–Woodbury identity behind the modified
preconditioner, its reduced lower block and the −LA₂ limit spectrum.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment

from core.config import settings
from core.exceptions import ConfigError, SizeGuardExceeded
from models.config import PreconditionerSpec, Variant, WMode
from models.report import InfSupReport, SpectrumReport
from models.system import SaddleSystem
from services.al_service import BaselineTriangularPreconditioner, al_service, augment_system
from utils.eigen import gen_sym_eig, nonsym_eig, sym_eig
from utils.linalg import WeightOperator, as_dense, dense_lu, sparse_factor

logger = logging.getLogger(__name__)

ZERO_TOL = 1e-10


def _guard(size: int) -> None:
    if size > settings.dense_size_limit:
        raise SizeGuardExceeded(
            f"dense spectral computation limited to size ≤ {settings.dense_size_limit}, got {size}"
        )


def _solve(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    return dense_lu(mat).solve(rhs)


def spectrum_report(values: np.ndarray, one_tol: Optional[float] = None,
                    metadata: Optional[dict] = None) -> SpectrumReport:
    """Cluster statistics of an eigenvalue list."""
    one_tol = settings.eig_one_tol if one_tol is None else one_tol
    values = np.asarray(values, dtype=complex)
    at_one = np.abs(values - 1.0) <= one_tol
    below = values.real[values.real < 1.0 - one_tol]
    return SpectrumReport(
        eigenvalues=values,
        count_at_one=int(at_one.sum()),
        eta=float(below.min()) if below.size else None,
        max_imag=float(np.max(np.abs(values.imag), initial=0.0)),
        max_real=float(np.max(values.real, initial=-np.inf)),
        min_real=float(np.min(values.real, initial=np.inf)),
        one_tol=one_tol,
        metadata=metadata or {},
    )


class SpectralService:
    """頻譜分析服務類"""

    def preconditioned_matrix(self, system: SaddleSystem, variant: Variant,
                              gammas: Tuple[float, float],
                              w_mode: Optional[WMode] = None) -> np.ndarray:
        """
        Dense P⁻¹𝒜 for the chosen variant, built column by column with
        exact inner solves. ``variant="none"`` returns the augmented matrix.
        """
        _guard(system.size)
        if variant == "inexact_al":
            raise ConfigError("spectra need a fixed preconditioner; use ideal_al for exact A_gamma solves")
        gamma1, gamma2 = gammas
        spec = PreconditionerSpec(variant=variant, gamma=gamma1, gamma1=gamma1, gamma2=gamma2,
                                  inner_solver="exact")
        if variant == "none":
            return system.matrix().toarray()
        if variant == "baseline_triangular":
            return np.asarray(BaselineTriangularPreconditioner(system)(system.matrix().toarray()))
        aug = augment_system(system, *spec.gammas, w_mode or spec.w_mode)
        prec = al_service.make_preconditioner(aug, spec)
        return np.asarray(prec(aug.to_dense()))

    def preconditioned_spectrum(self, system: SaddleSystem, variant: Variant = "ideal_al",
                                gammas: Tuple[float, float] = (10.0, 10.0),
                                w_mode: Optional[WMode] = None,
                                one_tol: Optional[float] = None,
                                backend: Optional[str] = None) -> SpectrumReport:
        """
        Spectrum of the preconditioned augmented matrix.

        Raises:
            SizeGuardExceeded: above ``settings.dense_size_limit`` unknowns
        """
        matrix = self.preconditioned_matrix(system, variant, gammas, w_mode)
        values = nonsym_eig(matrix, backend=backend).eigenvalues
        report = spectrum_report(values, one_tol, {
            "variant": variant, "gamma1": gammas[0], "gamma2": gammas[1],
            "beta": system.beta, "beta2": system.beta2,
            "n": system.n, "m": system.m, "ell": system.ell,
        })
        logger.info(f"{variant} spectrum {system.dof_string} gammas={gammas}: "
                    f"eta={report.eta}, at one={report.count_at_one}, max|Im|={report.max_imag:.1e}")
        return report

    def eta_formula_check(self, system: SaddleSystem, gamma: float, samples: int = 50,
                          one_tol: Optional[float] = None, backend: Optional[str] = None,
                          seed: int = 0) -> float:
        """
        max |λ − λ̂| over up to ``samples`` nonunit eigenpairs of the ideal
        preconditioned matrix, with λ̂ = γq / (xᵀÃx + γq), q = xᵀBᵀW⁻¹Bx.
        """
        one_tol = settings.eig_one_tol if one_tol is None else one_tol
        matrix = self.preconditioned_matrix(system, "ideal_al", (gamma, gamma), "exact")
        values = nonsym_eig(matrix, backend=backend).eigenvalues
        candidates = np.nonzero(np.abs(values - 1.0) > one_tol)[0]
        if candidates.size == 0:
            return 0.0
        picked = candidates[np.unique(np.linspace(0, candidates.size - 1, samples).astype(int))]
        select = np.zeros(values.size, dtype=bool)
        select[picked] = True
        result = nonsym_eig(matrix, want_vectors=True, select=select, backend=backend, seed=seed)

        weight = WeightOperator(system.M, "exact")
        B = system.B
        A_tilde = system.A_tilde
        top = system.n + system.m
        worst = 0.0
        for j in np.nonzero(select)[0]:
            lam = result.eigenvalues[j]
            x = result.eigenvectors[:top, j]
            bx = B @ x
            # the M factorization is real, so solve real and imaginary parts separately
            q = np.real(np.vdot(bx, weight.solve(bx.real) + 1j * weight.solve(bx.imag)))
            a = np.real(np.vdot(x, A_tilde @ x))
            if gamma * q + a <= 0:
                continue
            predicted = gamma * q / (a + gamma * q)
            worst = max(worst, float(abs(lam - predicted)))
        return worst

    def eta_pencil(self, system: SaddleSystem, gamma: float,
                   backend: Optional[str] = None) -> float:
        """η as the smallest positive eigenvalue of γBᵀW⁻¹B x = μ (Ã + γBᵀW⁻¹B) x."""
        _guard(system.n + system.m)
        weight = WeightOperator(system.M, "exact")
        B = as_dense(system.B)
        Q = gamma * B.T @ weight.solve(B)
        Q = 0.5 * (Q + Q.T)
        N = as_dense(system.A_tilde) + Q
        values = gen_sym_eig(Q, N, backend=backend).real
        positive = values[values > ZERO_TOL * max(1.0, values.max())]
        return float(positive.min())

    def spectral_equivalence_check(self, mass: sp.spmatrix, h: float, samples: int = 50,
                                   seed: int = 0) -> Tuple[float, float]:
        """Observed range of (wᵀM⁻²w) / (wᵀh⁻²M⁻¹w) over random w."""
        solve = sparse_factor(mass)
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((mass.shape[0], samples))
        y = solve(w)
        ratios = np.sum(y * y, axis=0) / (np.sum(w * y, axis=0) / h ** 2)
        return float(ratios.min()), float(ratios.max())

    def infsup_sigma1(self, system: SaddleSystem, h2: Optional[float] = None,
                      backend: Optional[str] = None) -> InfSupReport:
        """
        Smallest positive eigenvalue of Bᵀ(h₂²M)⁻¹B v = σ (Ã + diag(0, M)) v.

        Raises:
            NotSPD: if Ã + diag(0, M) is not positive definite
        """
        _guard(system.n + system.m)
        h2 = system.h2 if h2 is None else h2
        B = as_dense(system.B)
        Q = B.T @ sparse_factor(system.M)(B) / h2 ** 2
        Q = 0.5 * (Q + Q.T)
        N = as_dense(system.A_tilde)
        N[system.n:, system.n:] += as_dense(system.M)
        values = gen_sym_eig(Q, N, backend=backend).real
        tol = ZERO_TOL * max(1.0, float(np.max(np.abs(values))))
        zero_count = int(np.sum(values <= tol))
        sigma1 = float(values[values > tol].min())
        lam_max = float(sym_eig(as_dense(system.M), backend=backend).real.max())
        c1 = h2 ** 2 / lam_max
        return InfSupReport(sigma1=sigma1, zero_count=zero_count,
                            expected_zero_count=system.n + system.m - system.ell,
                            c1=c1, theta_bar_sq=c1 * sigma1)

    def eta_lower_bound(self, system: SaddleSystem, gamma: float,
                        infsup: Optional[InfSupReport] = None) -> float:
        """γθ̄² / (1 + γθ̄²) with θ̄² = c₁σ₁."""
        infsup = infsup or self.infsup_sigma1(system)
        value = gamma * infsup.theta_bar_sq
        return value / (1.0 + value)

    def verify_smw_identity(self, system: SaddleSystem, gamma1: float,
                            w_mode: WMode = "exact") -> float:
        """Relative Frobenius gap of γ₁C A₁₁⁻¹CᵀW⁻¹ = I − (I + γ₁CA⁻¹CᵀW⁻¹)⁻¹."""
        _guard(system.n)
        A = as_dense(system.A)
        C = as_dense(system.C)
        w_inv = WeightOperator(system.M, w_mode).dense_inverse()
        identity = np.eye(system.ell)
        A11 = A + gamma1 * C.T @ w_inv @ C
        lhs = gamma1 * C @ _solve(A11, C.T) @ w_inv
        rhs = identity - np.linalg.inv(identity + gamma1 * C @ _solve(A, C.T) @ w_inv)
        scale = max(np.linalg.norm(lhs), np.linalg.norm(rhs))
        if scale == 0:
            return 0.0
        return float(np.linalg.norm(lhs - rhs) / scale)

    def mal_blocks(self, system: SaddleSystem, gamma1: float, gamma2: float,
                   w_mode: WMode = "exact") -> Dict[str, np.ndarray]:
        """Dense D, E, F, G of the reduced modified-AL lower block."""
        _guard(system.n)
        A = as_dense(system.A)
        C = as_dense(system.C)
        C2 = as_dense(system.C2)
        w_inv = WeightOperator(system.M, w_mode).dense_inverse()
        identity = np.eye(system.ell)
        A22 = as_dense(system.A2) + gamma2 * C2.T @ w_inv @ C2
        F = np.linalg.inv(identity + gamma1 * C @ _solve(A, C.T) @ w_inv)
        D = gamma2 * C2.T @ w_inv @ (identity - F)
        E = _solve(A22.T, C2.T).T
        G = identity - gamma1 * E @ C2.T @ w_inv
        return {"D": D, "E": E, "F": F, "G": G}

    def mal_block_spectrum(self, system: SaddleSystem, gamma1: float, gamma2: float,
                           w_mode: WMode = "exact", one_tol: Optional[float] = None,
                           backend: Optional[str] = None) -> SpectrumReport:
        """Spectrum of [[I − DE, −DG], [−FE, I − FG]]; the outlier is the largest real part."""
        blocks = self.mal_blocks(system, gamma1, gamma2, w_mode)
        D, E, F, G = blocks["D"], blocks["E"], blocks["F"], blocks["G"]
        matrix = np.block([
            [np.eye(system.m) - D @ E, -D @ G],
            [-F @ E, np.eye(system.ell) - F @ G],
        ])
        values = nonsym_eig(matrix, backend=backend).eigenvalues
        report = spectrum_report(values, one_tol, {
            "variant": "mal_lower_block", "gamma1": gamma1, "gamma2": gamma2,
            "beta2": system.beta2, "m": system.m, "ell": system.ell,
        })
        report.metadata["outlier"] = report.max_real
        return report

    def limit_spectrum_LA2(self, system: SaddleSystem, backend: Optional[str] = None) -> np.ndarray:
        """
        eig(−LA₂) with L = M⁻¹CA⁻¹CᵀM⁻¹, through the symmetric L^½ A₂ L^½.

        Returned ascending; exactly one value is zero up to rounding.
        """
        _guard(system.n)
        if system.m != system.ell:
            raise ConfigError("the -LA2 limit needs a square C2 (multipliers on the immersed space)")
        C = as_dense(system.C)
        m_inv_c = sparse_factor(system.M)(C)
        L = m_inv_c @ _solve(as_dense(system.A), m_inv_c.T)
        L = 0.5 * (L + L.T)
        decomposition = sym_eig(L, backend=backend)
        roots = np.sqrt(np.clip(decomposition.real, 0.0, None))
        vectors = decomposition.eigenvectors
        half = (vectors * roots) @ vectors.T
        S = half @ as_dense(system.A2) @ half
        values = sym_eig(0.5 * (S + S.T), backend=backend).real
        return np.sort(-values)

    def limit_matching_distances(self, system: SaddleSystem,
                                 pairs: Sequence[Tuple[float, float]],
                                 backend: Optional[str] = None) -> List[float]:
        """
        Mean relative matched-set distance between reciprocals of eig(ED + GF)
        and eig(−LA₂), for each (γ₁, γ₂).

        A pair (a, b) costs |a − b| / max(|a|, |b|). The pair matched to the
        zero of −LA₂ is dropped from the mean, so the vanishing reciprocal of
        the unbounded eigenvalue of ED + GF never counts.
        """
        limit = self.limit_spectrum_LA2(system, backend=backend)
        zero = int(np.argmin(np.abs(limit)))
        tiny = np.finfo(float).tiny
        distances = []
        for gamma1, gamma2 in pairs:
            blocks = self.mal_blocks(system, gamma1, gamma2)
            reduced = blocks["E"] @ blocks["D"] + blocks["G"] @ blocks["F"]
            mu = nonsym_eig(reduced, backend=backend).eigenvalues
            reciprocal = 1.0 / mu
            diff = np.abs(reciprocal[:, None] - limit[None, :])
            size = np.maximum(np.abs(reciprocal)[:, None], np.abs(limit)[None, :])
            cost = diff / np.maximum(size, tiny)
            rows, cols = linear_sum_assignment(cost)
            kept = cols != zero
            distance = float(cost[rows[kept], cols[kept]].mean())
            distances.append(distance)
            logger.info(f"-LA2 matching at gammas=({gamma1:g}, {gamma2:g}): distance {distance:.3e}")
        return distances


spectral_service = SpectralService()
