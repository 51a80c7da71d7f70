"""Dense kernels, seeded randomness and a finite-difference gradient oracle.

Every matrix here is a float64 ``numpy.ndarray``. Operations that follow the
display-model algebra use the *column* convention: a pool of ``n`` points in
``R^p`` is a ``(p, n)`` array whose columns are samples.

Randomness always goes through :func:`make_rng`, which returns a
``numpy.random.Generator`` backed by PCG64. PCG64 streams are specified by
numpy independently of platform, so a seed fully determines every draw.
"""

import numpy as np


class ContractError(ValueError):
    """An operation was called with inputs violating its preconditions."""


class DegenerateColumnError(ContractError):
    """A column cannot be normalized because it sums to zero."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""


def make_rng(seed=None):
    """Return a PCG64-backed generator.

    Accepts an int, a ``numpy.random.SeedSequence``, an existing ``Generator``
    (returned unchanged) or ``None`` (fresh OS entropy, non-reproducible).
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def spawn_seeds(master_seed, count):
    """Derive ``count`` independent integer seeds from one master seed."""
    children = np.random.SeedSequence(master_seed).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for c in children]


def as_matrix(a, name="matrix"):
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def pairwise_sq_dists(A, B):
    """Squared Euclidean distances between the columns of ``A`` and ``B``.

    Uses the Gram expansion ``diag(A'A) 1' + 1 diag(B'B)' - 2 A'B`` and clamps
    the negative round-off at zero.

    Parameters
    ----------
    A : array of shape (p, a)
    B : array of shape (p, b)

    Returns
    -------
    D : array of shape (a, b)
        ``D[i, j] = ||A[:, i] - B[:, j]||^2``.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape[0] != B.shape[0]:
        raise ContractError(
            f"row count mismatch: A has {A.shape[0]} rows, B has {B.shape[0]}"
        )
    sq_a = np.einsum("ij,ij->j", A, A)
    sq_b = np.einsum("ij,ij->j", B, B)
    D = sq_a[:, None] + sq_b[None, :] - 2.0 * (A.T @ B)
    np.maximum(D, 0.0, out=D)
    if A is B:
        np.fill_diagonal(D, 0.0)
    return D


def column_normalize(M, ridge=0.0):
    """Scale each column of a nonnegative matrix by ``1 / (column sum + ridge)``."""
    M = as_matrix(M)
    if ridge < 0:
        raise ContractError("ridge must be nonnegative")
    if np.any(M < 0):
        raise ContractError("column_normalize expects nonnegative entries")
    sums = M.sum(axis=0) + ridge
    bad = np.flatnonzero(sums <= 0)
    if bad.size:
        raise DegenerateColumnError(f"columns {bad.tolist()} sum to zero")
    return M / sums[None, :]


def finite_diff_grad(f, at, step=1e-4):
    """Central-difference gradient of a scalar function of an array.

    Parameters
    ----------
    f : callable
        Maps an array shaped like ``at`` to a float.
    at : array
        Evaluation point; it is not modified.
    step : float
        Perturbation size.

    Returns
    -------
    grad : array shaped like ``at``
    """
    if step <= 0:
        raise ContractError("step must be positive")
    x = np.array(at, dtype=np.float64, copy=True)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(x))
        flat[i] = orig - step
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def random_orthonormal(d, rng):
    """Orthonormalized Gaussian ``d x d`` matrix (QR with sign fix)."""
    G = rng.standard_normal((d, d))
    Q, R = np.linalg.qr(G)
    return Q * np.sign(np.diag(R))[None, :]


def polar_project(W):
    """Nearest orthonormal matrix in Frobenius norm (``U V'`` from the SVD)."""
    U, _, Vt = np.linalg.svd(W)
    return U @ Vt
