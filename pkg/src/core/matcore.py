"""
Small dense-matrix kernels used by every other module.

Matrices are plain float64 numpy arrays. Functions here never mutate their
inputs, so they can be called from any thread.
"""

import logging
from enum import Enum
from typing import Iterable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from src.core.errors import ShapeMismatch, SingularGram

logger = logging.getLogger(__name__)

# Ridge damping used throughout the library unless a caller overrides it
DEFAULT_LAMBDA = 1e-6
PIVOT_TOLERANCE = 1e-12


class Side(str, Enum):
    LEFT = "Left"    # (M^T M + lambda I)^-1, r = cols(M)
    RIGHT = "Right"  # (M M^T + lambda I)^-1, r = rows(M)


class Space(str, Enum):
    COLUMN = "ColumnSpace"
    ROW = "RowSpace"


def as_matrix(data, name: str = "matrix") -> np.ndarray:
    """
    Builds a validated float64 matrix from external data.

    Parameters:
    - data: anything numpy can turn into a 2-D array.
    - name (str): used in error messages.

    Returns:
    - np.ndarray: a fresh 2-D float64 array with only finite entries.
    """
    arr = np.array(data, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ShapeMismatch(f"{name} must be a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return arr


def check_shape(mat: np.ndarray, shape, name: str) -> None:
    if mat.shape != tuple(shape):
        raise ShapeMismatch(f"{name} has shape {mat.shape}, expected {tuple(shape)}")


def frobenius(mat: np.ndarray) -> float:
    return float(np.linalg.norm(mat, "fro"))


def relative_error(actual: np.ndarray, expected: np.ndarray) -> float:
    """||actual - expected||_F / ||expected||_F, falling back to the absolute error when expected is 0."""
    diff = frobenius(np.asarray(actual) - np.asarray(expected))
    scale = frobenius(np.asarray(expected))
    return diff / scale if scale > 0.0 else diff


def gram(mat: np.ndarray, side: Side) -> np.ndarray:
    side = Side(side)
    return mat.T @ mat if side is Side.LEFT else mat @ mat.T


def damped_gram_inverse(mat: np.ndarray, side: Side, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """
    Inverts the ridge-damped Gram matrix of `mat` through a Cholesky factorization.

    Side.LEFT returns (M^T M + lambda I)^-1 (r = cols(M)); Side.RIGHT returns
    (M M^T + lambda I)^-1 (r = rows(M)). The result is exactly symmetric.

    Raises:
    - SingularGram: lambda is 0 and a Cholesky pivot falls below 1e-12 x trace,
      or the factorization itself fails.
    """
    if lam < 0.0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    g = gram(mat, side)
    r = g.shape[0]
    damped = g + lam * np.eye(r)
    trace = float(np.trace(damped))
    if trace <= 0.0:
        raise SingularGram(f"Gram matrix of a zero {mat.shape} matrix is singular; supply lambda > 0")
    try:
        factor, lower = cho_factor(damped, lower=True, check_finite=False)
    except np.linalg.LinAlgError as e:
        raise SingularGram(f"SPD factorization failed for {r}x{r} Gram (lambda={lam}): {str(e)}") from e
    pivots = np.diag(factor) ** 2
    if lam == 0.0 and pivots.min() < PIVOT_TOLERANCE * trace:
        raise SingularGram(
            f"Gram pivot {pivots.min():.3e} below {PIVOT_TOLERANCE:g} x trace ({trace:.3e}); supply lambda > 0"
        )
    inv = cho_solve((factor, lower), np.eye(r), check_finite=False)
    return 0.5 * (inv + inv.T)


def projector(mat: np.ndarray, space: Space, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """
    Orthogonal projector onto the column space of B (k x r) or the row space of A (r x d).

    ColumnSpace: B (B^T B + lambda I)^-1 B^T, a k x k matrix.
    RowSpace:    A^T (A A^T + lambda I)^-1 A, a d x d matrix.
    """
    space = Space(space)
    if space is Space.COLUMN:
        return mat @ damped_gram_inverse(mat, Side.LEFT, lam) @ mat.T
    return mat.T @ damped_gram_inverse(mat, Side.RIGHT, lam) @ mat


# --- seeded random generation -------------------------------------------------

def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream; bit-identical across platforms for a given seed."""
    return np.random.Generator(np.random.PCG64(seed))


def gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normal samples via Box-Muller on the generator's uniform stream."""
    shape = tuple(shape) if isinstance(shape, Iterable) else (int(shape),)
    count = int(np.prod(shape))
    pairs = (count + 1) // 2
    u1 = 1.0 - rng.random(pairs)  # (0, 1], keeps log finite
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    samples = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
    return samples[:count].reshape(shape)


def random_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(gaussian(rng, (n, n)))
    signs = np.sign(np.diag(r))
    signs[signs == 0.0] = 1.0
    return q * signs


def gauge_sample(r: int, cond_max: float, seed: int) -> np.ndarray:
    """
    Draws an invertible r x r gauge R = Q diag(sigma) Q'^T with cond(R) <= cond_max.

    Singular values are log-uniform in [1/sqrt(cond_max), sqrt(cond_max)].
    """
    if r < 1:
        raise ValueError(f"r must be positive, got {r}")
    if cond_max < 1.0:
        raise ValueError(f"cond_max must be >= 1, got {cond_max}")
    rng = make_rng(seed)
    q_left = random_orthogonal(rng, r)
    q_right = random_orthogonal(rng, r)
    half_log = 0.5 * np.log(cond_max)
    sigma = np.exp(rng.uniform(-half_log, half_log, size=r))
    return (q_left * sigma) @ q_right.T


# --- text serialization for golden fixtures ----------------------------------

def format_matrix(mat: np.ndarray) -> str:
    """Row-major text, one row per line, 17 significant digits."""
    return "\n".join(" ".join(f"{v:.17g}" for v in row) for row in np.atleast_2d(mat)) + "\n"


def parse_matrix(text: str, name: Optional[str] = None) -> np.ndarray:
    rows = [line.split() for line in text.strip().splitlines() if line.strip()]
    widths = {len(row) for row in rows}
    if len(widths) != 1:
        raise ShapeMismatch(f"{name or 'matrix'} text has ragged rows: widths {sorted(widths)}")
    return as_matrix([[float(v) for v in row] for row in rows], name or "matrix")
