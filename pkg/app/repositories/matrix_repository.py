"""
Matrix repository with caching support.

Implements the Repository Pattern for assembled blocks and vectors on disk
(Matrix Market) and an LRU cache layer for assembled saddle-point systems
so parameter sweeps reuse them.
"""
import logging
import threading
from abc import ABC, abstractmethod
from datetime import datetime, timedelta
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import scipy.io
import scipy.sparse as sp

from core.config import settings
from core.exceptions import ParseError
from models.system import SaddleSystem
from utils.linalg import finalize_csr, symmetry_defect

logger = logging.getLogger(__name__)

Storable = Union[sp.spmatrix, np.ndarray]

# block names exported for a saddle-point system
SYSTEM_BLOCKS = ("A", "A2", "C", "C2", "M", "f", "g")


class SystemCache:
    """
    Thread-safe LRU cache with TTL support.

    Keyed by the canonical JSON of a ProblemConfig; holds assembled
    SaddleSystems, which are never mutated after assembly.
    """

    def __init__(self, maxsize: int = 16, ttl_seconds: int = 3600):
        self._cache: Dict[str, SaddleSystem] = {}
        self._timestamps: Dict[str, datetime] = {}
        self._last_used: Dict[str, datetime] = {}
        self._lock = threading.RLock()
        self._maxsize = maxsize
        self._ttl = timedelta(seconds=ttl_seconds)
        self._hits = 0
        self._misses = 0

    def get(self, key: str) -> Optional[SaddleSystem]:
        """Get a cached system if it exists and is not expired."""
        with self._lock:
            if key not in self._cache:
                self._misses += 1
                return None

            # Check TTL
            if datetime.now() - self._timestamps[key] > self._ttl:
                self.invalidate(key)
                self._misses += 1
                return None

            self._hits += 1
            self._last_used[key] = datetime.now()
            return self._cache[key]

    def set(self, key: str, value: SaddleSystem) -> None:
        """Set a cache item, evicting the least recently used if necessary."""
        with self._lock:
            if len(self._cache) >= self._maxsize and key not in self._cache:
                oldest_key = min(self._last_used, key=self._last_used.get)
                self.invalidate(oldest_key)

            now = datetime.now()
            self._cache[key] = value
            self._timestamps[key] = now
            self._last_used[key] = now

    def invalidate(self, key: str) -> None:
        """Remove a specific item from cache."""
        with self._lock:
            self._cache.pop(key, None)
            self._timestamps.pop(key, None)
            self._last_used.pop(key, None)

    def clear(self) -> None:
        """Clear all cached items."""
        with self._lock:
            self._cache.clear()
            self._timestamps.clear()
            self._last_used.clear()
            self._hits = 0
            self._misses = 0

    def stats(self) -> dict:
        """Get cache statistics."""
        with self._lock:
            return {
                "size": len(self._cache),
                "max_size": self._maxsize,
                "ttl_seconds": self._ttl.total_seconds(),
                "hits": self._hits,
                "misses": self._misses,
            }


class MatrixRepositoryInterface(ABC):
    """Abstract interface for matrix storage."""

    @abstractmethod
    def save(self, name: str, data: Storable) -> Path:
        """Store a sparse matrix or a dense vector/matrix under a name."""
        pass

    @abstractmethod
    def load(self, name: str) -> Storable:
        """Load a stored object (CSR for sparse, 1-D array for vectors)."""
        pass

    @abstractmethod
    def exists(self, name: str) -> bool:
        pass

    @abstractmethod
    def list_names(self) -> List[str]:
        pass


class MatrixMarketRepository(MatrixRepositoryInterface):
    """Matrix Market files in one directory, one ``<name>.mtx`` per object."""

    def __init__(self, root: Union[str, Path]):
        self._root = Path(root)

    @property
    def root(self) -> Path:
        return self._root

    def path_for(self, name: str) -> Path:
        return self._root / f"{name}.mtx"

    def save(self, name: str, data: Storable) -> Path:
        """
        Write coordinate format for sparse input, array format otherwise.

        Symmetric sparse matrices are stored with symmetric storage; values
        carry 17 significant digits so a reload is exact.
        """
        self._root.mkdir(parents=True, exist_ok=True)
        path = self.path_for(name)
        if sp.issparse(data):
            mat = finalize_csr(data)
            square = mat.shape[0] == mat.shape[1]
            symmetry = "symmetric" if square and mat.nnz and symmetry_defect(mat) == 0.0 else "general"
            scipy.io.mmwrite(str(path), sp.coo_matrix(mat), symmetry=symmetry, precision=17)
        else:
            arr = np.asarray(data, dtype=float)
            if arr.ndim == 1:
                arr = arr[:, None]
            scipy.io.mmwrite(str(path), arr, precision=17)
        logger.debug(f"Wrote {path}")
        return path

    def load(self, name: str) -> Storable:
        return self.load_path(self.path_for(name))

    def load_path(self, path: Union[str, Path]) -> Storable:
        """Read a Matrix Market file; ParseError on a malformed header or body."""
        path = Path(path)
        with open(path, "r", encoding="utf-8") as handle:
            header = handle.readline()
        if not header.lower().startswith("%%matrixmarket"):
            raise ParseError("missing %%MatrixMarket header", line=1, path=str(path))
        try:
            data = scipy.io.mmread(str(path))
        except (ValueError, IndexError) as e:
            raise ParseError(f"malformed Matrix Market data: {e}", path=str(path)) from e
        if sp.issparse(data):
            return finalize_csr(data)
        arr = np.asarray(data, dtype=float)
        if arr.ndim == 2 and arr.shape[1] == 1:
            return arr.ravel()
        return arr

    def exists(self, name: str) -> bool:
        return self.path_for(name).is_file()

    def list_names(self) -> List[str]:
        if not self._root.is_dir():
            return []
        return sorted(p.stem for p in self._root.glob("*.mtx"))

    def save_system(self, system: SaddleSystem) -> Dict[str, Path]:
        """Export every block of an assembled system."""
        return {name: self.save(name, getattr(system, name)) for name in SYSTEM_BLOCKS}

    def save_solution(self, u: np.ndarray, u2: np.ndarray, lam: np.ndarray) -> Dict[str, Path]:
        return {"u": self.save("u", u), "u2": self.save("u2", u2), "lambda": self.save("lambda", lam)}


# Global cache instance
_system_cache = SystemCache(
    maxsize=settings.cache_max_size,
    ttl_seconds=settings.cache_ttl_seconds
)


def get_system_cache() -> SystemCache:
    """Get the global saddle-system cache instance."""
    return _system_cache
