"""
Discrete system models for the FD-DLM augmented Lagrangian toolkit.

Contains the finite-element space, quadrature rule, the assembled 3×3
saddle-point system and its γ₁/γ₂-augmented counterpart.
"""
from typing import Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from pydantic import BaseModel, ConfigDict, model_validator

from models.config import BoundaryCondition, ProblemConfig, WMode
from models.mesh import Mesh
from utils.linalg import WeightOperator

Block = Union[sp.csr_matrix, spla.LinearOperator]


class FeSpace(BaseModel):
    """Q1 Lagrange space on a mesh: one degree of freedom per node."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mesh: Mesh
    dirichlet: Optional[np.ndarray] = None

    @model_validator(mode="after")
    def _check_dirichlet(self):
        if self.dirichlet is not None:
            outside = np.setdiff1d(self.dirichlet, self.mesh.boundary_nodes)
            if outside.size:
                raise ValueError(f"Dirichlet nodes {outside[:5].tolist()} are not boundary nodes")
        return self

    @property
    def dof_count(self) -> int:
        return self.mesh.n_nodes

    @property
    def free_mask(self) -> np.ndarray:
        """1.0 on unconstrained dofs, 0.0 on Dirichlet dofs."""
        mask = np.ones(self.dof_count)
        if self.dirichlet is not None:
            mask[self.dirichlet] = 0.0
        return mask


class QuadratureRule(BaseModel):
    """Tensor Gauss rule on the reference square [0,1]² (weights sum to 1)."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    points: np.ndarray
    weights: np.ndarray
    order: int


class SaddleSystem(BaseModel):
    """The FD-DLM system [[A,0,Cᵀ],[0,A₂,−C₂ᵀ],[C,−C₂,0]]·(u,u₂,λ) = (f,g,0)."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    A: sp.csr_matrix
    A2: sp.csr_matrix
    C: sp.csr_matrix
    C2: sp.csr_matrix
    M: sp.csr_matrix
    f: np.ndarray
    g: np.ndarray
    beta: float
    beta2: float
    bc: BoundaryCondition = "dirichlet_zero"
    bg_space: FeSpace
    im_space: FeSpace
    problem: Optional[ProblemConfig] = None

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.A2.shape[0]

    @property
    def ell(self) -> int:
        return self.M.shape[0]

    @property
    def size(self) -> int:
        return self.n + self.m + self.ell

    @property
    def h(self) -> float:
        return self.bg_space.mesh.h

    @property
    def h2(self) -> float:
        return self.im_space.mesh.h

    @property
    def dof_string(self) -> str:
        return f"{self.n}+{self.m}+{self.ell}"

    @property
    def B(self) -> sp.csr_matrix:
        return sp.hstack([self.C, -self.C2], format="csr")

    @property
    def A_tilde(self) -> sp.csr_matrix:
        return sp.block_diag([self.A, self.A2], format="csr")

    def matrix(self) -> sp.csr_matrix:
        return sp.bmat(
            [[self.A, None, self.C.T], [None, self.A2, -self.C2.T], [self.C, -self.C2, None]],
            format="csr",
        )

    def rhs(self) -> np.ndarray:
        return np.concatenate([self.f, self.g, np.zeros(self.ell)])

    def split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return x[:self.n], x[self.n:self.n + self.m], x[self.n + self.m:]

    def metadata(self) -> dict:
        return {"n": self.n, "m": self.m, "ell": self.ell, "beta": self.beta,
                "beta2": self.beta2, "h": self.h, "h2": self.h2}


class AugmentedSystem(BaseModel):
    """γ₁/γ₂-augmented operator with the same right-hand side and solution.

    Blocks are CSR when W is diagonal and scipy LinearOperators when W = M²,
    because Cᵀ M⁻² C is dense.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    system: SaddleSystem
    gamma1: float
    gamma2: float
    w_mode: WMode
    weight: WeightOperator
    A11: Block
    A12: Block
    A21: Block
    A22: Block

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def m(self) -> int:
        return self.system.m

    @property
    def ell(self) -> int:
        return self.system.ell

    @property
    def size(self) -> int:
        return self.system.size

    @property
    def is_sparse(self) -> bool:
        return all(sp.issparse(b) for b in (self.A11, self.A12, self.A21, self.A22))

    def rhs(self) -> np.ndarray:
        return self.system.rhs()

    def split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.system.split(x)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Apply the full augmented operator to a vector or to columns of a matrix."""
        s = self.system
        u, u2, lam = s.split(x)
        top = self.A11 @ u + self.A12 @ u2 + s.C.T @ lam
        mid = self.A21 @ u + self.A22 @ u2 - s.C2.T @ lam
        bottom = s.C @ u - s.C2 @ u2
        return np.concatenate([np.asarray(top), np.asarray(mid), np.asarray(bottom)])

    def operator(self) -> spla.LinearOperator:
        return spla.LinearOperator((self.size, self.size), matvec=self.matvec,
                                   matmat=self.matvec, dtype=float)

    def dense_block(self, name: str) -> np.ndarray:
        block = getattr(self, name)
        if sp.issparse(block):
            return block.toarray()
        return np.asarray(block @ np.eye(block.shape[1]))

    def gamma_block_dense(self) -> np.ndarray:
        """Dense (n+m)×(n+m) leading block [[A11, A12],[A21, A22]]."""
        return np.block([
            [self.dense_block("A11"), self.dense_block("A12")],
            [self.dense_block("A21"), self.dense_block("A22")],
        ])

    def to_dense(self) -> np.ndarray:
        s = self.system
        c = s.C.toarray()
        c2 = s.C2.toarray()
        zero = np.zeros((self.ell, self.ell))
        return np.block([
            [self.dense_block("A11"), self.dense_block("A12"), c.T],
            [self.dense_block("A21"), self.dense_block("A22"), -c2.T],
            [c, -c2, zero],
        ])
