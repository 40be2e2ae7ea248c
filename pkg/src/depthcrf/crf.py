"""Exact Gaussian conditional random field on a superpixel graph.

A graph instance couples per-node regressed log-depths ``z`` with nonnegative
edge couplings derived from appearance similarities.  The energy of a depth
assignment ``y``,

    E(y) = sum_p (y_p - z_p)^2 + sum_{(p,q) in edges} r_pq (y_p - y_q)^2,

is a positive definite quadratic in ``y``, so the normalizer of ``exp(-E)``
is a Gaussian integral and everything downstream is closed form:

    E(y)      = y' A y - 2 z' y + z' z,   with A = I + D - R, D = diag(R 1)
    log Z     = (n/2) log(pi) - (1/2) log|A| + z' A^{-1} z - z' z
    -log p(y) = E(y) + log Z
    argmax_y p(y|x) = A^{-1} z

``R`` collects the per-edge couplings, assembled as a beta-weighted sum of a
stack of similarity matrices.  With ``beta >= 0`` and similarities in
``[0, 1]`` the matrix ``A`` is strictly diagonally dominant with positive
diagonal, hence symmetric positive definite, so a plain dense Cholesky
factorization carries the solves and the log-determinant.  Graph sizes are
desk scale (hundreds to low thousands of nodes); dense linear algebra is the
simplest thing that can be audited.

Gradients of the negative log-likelihood:

    d(-log p)/dz     = 2 (A^{-1} z - y)
    d(-log p)/dbeta_k = y' J_k y - z' A^{-1} J_k A^{-1} z - (1/2) tr(A^{-1} J_k)

where ``J_k = dA/dbeta_k = diag(S_k 1) - S_k``.  The ``z`` gradient is the
hook for backpropagation into whatever regressor produced ``z``.
"""

from __future__ import annotations

from dataclasses import InitVar, dataclass

import numpy as np
import scipy.linalg


class FactorizationError(RuntimeError):
    """Cholesky failed: the precision matrix is not positive definite.

    Under the documented preconditions (nonnegative pairwise weights,
    similarities in [0, 1]) this cannot happen, so it always signals invalid
    inputs rather than a condition to regularize away.
    """


def _frozen(values, dtype=float):
    """Return a read-only float array, copying only if needed."""
    arr = np.asarray(values, dtype=dtype)
    if arr.flags.writeable:
        arr = arr.copy()
        arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PairwiseWeights:
    """Nonnegative coupling coefficients, one per similarity channel."""

    beta: np.ndarray

    def __post_init__(self):
        beta = _frozen(self.beta)
        if beta.ndim != 1 or beta.size == 0:
            raise ValueError("beta must be a non-empty 1-D vector")
        if not np.all(np.isfinite(beta)) or np.any(beta < 0):
            raise ValueError("pairwise weights must be finite and >= 0")
        object.__setattr__(self, "beta", beta)

    def __len__(self):
        return self.beta.size


def _canonical_edges(edges):
    """Edges as a read-only (E, 2) int array, rows sorted, low index first."""
    arr = np.asarray(edges, dtype=np.intp)
    if arr.size == 0:
        arr = np.empty((0, 2), dtype=np.intp)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("edges must have shape (E, 2)")
    arr = np.sort(arr, axis=1)
    arr = np.unique(arr, axis=0)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CrfInstance:
    """One image's graph: regressed values, similarity stack, edge set.

    ``similarities`` has shape (K, n, n).  Each channel is symmetric, zero on
    the diagonal, zero off the edge set, with entries in [0, 1].  ``y`` holds
    ground-truth log-depths and may be omitted at prediction time.

    Construction with ``validate=False`` skips the structural checks (and the
    edge canonicalization); that path is for rebuilding instances from arrays
    that already passed validation, e.g. once per training step.
    """

    z: np.ndarray
    similarities: np.ndarray
    edges: np.ndarray
    y: np.ndarray | None = None
    validate: InitVar[bool] = True

    def __post_init__(self, validate):
        object.__setattr__(self, "z", _frozen(self.z))
        object.__setattr__(self, "similarities", _frozen(self.similarities))
        if self.y is not None:
            object.__setattr__(self, "y", _frozen(self.y))
        if validate:
            object.__setattr__(self, "edges", _canonical_edges(self.edges))
            self._check()
        else:
            object.__setattr__(self, "edges", self.edges)

    def _check(self):
        z, sims, edges = self.z, self.similarities, self.edges
        if z.ndim != 1 or z.size < 1:
            raise ValueError("z must be a vector with at least one node")
        n = z.size
        if sims.ndim != 3 or sims.shape[1:] != (n, n) or sims.shape[0] < 1:
            raise ValueError(f"similarities must have shape (K, {n}, {n})")
        if self.y is not None and self.y.shape != (n,):
            raise ValueError("y must match z in length")
        for arr in (z, sims) + (() if self.y is None else (self.y,)):
            if not np.all(np.isfinite(arr)):
                raise ValueError("instance arrays must be finite")
        if edges.size:
            if edges.min() < 0 or edges.max() >= n:
                raise ValueError("edge indices out of range")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise ValueError("self-loops are not allowed")
        if not np.array_equal(sims, sims.transpose(0, 2, 1)):
            raise ValueError("similarity matrices must be symmetric")
        if np.any(sims < 0) or np.any(sims > 1):
            raise ValueError("similarities must lie in [0, 1]")
        allowed = np.zeros((n, n), dtype=bool)
        if edges.size:
            allowed[edges[:, 0], edges[:, 1]] = True
            allowed[edges[:, 1], edges[:, 0]] = True
        if np.any(sims[:, ~allowed] != 0.0):
            raise ValueError("similarities must vanish off the edge set")

    @property
    def n(self):
        return self.z.size

    @property
    def num_channels(self):
        return self.similarities.shape[0]


@dataclass(frozen=True)
class Precision:
    """Dense SPD precision matrix with its Cholesky factor and log|A|."""

    matrix: np.ndarray
    chol: np.ndarray
    logdet: float

    def solve(self, rhs):
        return scipy.linalg.cho_solve((self.chol, True), rhs, check_finite=False)


def coupling_matrix(instance: CrfInstance, weights: PairwiseWeights) -> np.ndarray:
    """Dense symmetric coupling matrix: entrywise beta-weighted similarity sum."""
    if len(weights) != instance.num_channels:
        raise ValueError(
            f"expected {instance.num_channels} weights, got {len(weights)}"
        )
    return np.einsum("k,kpq->pq", weights.beta, instance.similarities)


def build_precision(coupling: np.ndarray) -> Precision:
    """Factor A = I + D - R for a symmetric coupling matrix R.

    Raises FactorizationError when A is not positive definite, which under
    valid inputs (R nonnegative) cannot happen.
    """
    coupling = np.asarray(coupling, dtype=float)
    if coupling.ndim != 2 or coupling.shape[0] != coupling.shape[1]:
        raise ValueError("coupling matrix must be square")
    if not np.array_equal(coupling, coupling.T):
        raise ValueError("coupling matrix must be symmetric")
    n = coupling.shape[0]
    a = -coupling.copy()
    a[np.diag_indices(n)] += 1.0 + coupling.sum(axis=1)
    try:
        chol = scipy.linalg.cholesky(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"precision matrix is not positive definite: {exc}")
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return Precision(matrix=a, chol=chol, logdet=logdet)


def _precision_for(instance, weights):
    return build_precision(coupling_matrix(instance, weights))


def energy(instance: CrfInstance, weights: PairwiseWeights, depths) -> float:
    """Energy of a depth assignment, evaluated term by term.

    Equals the quadratic form y'Ay - 2z'y + z'z; the direct sum is kept so
    tests can cross-check the two routes.
    """
    y = np.asarray(depths, dtype=float)
    if y.shape != (instance.n,):
        raise ValueError("depth assignment must match the node count")
    unary = float(np.sum((y - instance.z) ** 2))
    edges = instance.edges
    if edges.size == 0:
        return unary
    coupling = coupling_matrix(instance, weights)
    diffs = y[edges[:, 0]] - y[edges[:, 1]]
    pairwise = float(np.sum(coupling[edges[:, 0], edges[:, 1]] * diffs * diffs))
    return unary + pairwise


def log_partition(instance: CrfInstance, weights: PairwiseWeights) -> float:
    """log integral of exp(-E) over all depth assignments."""
    prec = _precision_for(instance, weights)
    z = instance.z
    return (
        0.5 * instance.n * np.log(np.pi)
        - 0.5 * prec.logdet
        + float(z @ prec.solve(z))
        - float(z @ z)
    )


def _require_y(instance):
    if instance.y is None:
        raise ValueError("instance has no ground-truth depths")
    return instance.y


def nll(instance: CrfInstance, weights: PairwiseWeights) -> float:
    """Negative log-likelihood of the instance's ground-truth depths."""
    y = _require_y(instance)
    prec = _precision_for(instance, weights)
    z = instance.z
    return (
        float(y @ (prec.matrix @ y))
        - 2.0 * float(z @ y)
        + float(z @ prec.solve(z))
        - 0.5 * prec.logdet
        + 0.5 * instance.n * np.log(np.pi)
    )


def map_infer(instance: CrfInstance, weights: PairwiseWeights) -> np.ndarray:
    """Most probable depth assignment, the solution of A y = z."""
    prec = _precision_for(instance, weights)
    return prec.solve(instance.z)


def grad_unary(instance: CrfInstance, weights: PairwiseWeights) -> np.ndarray:
    """Gradient of the NLL with respect to the regressed values z.

    Chaining this with dz/dtheta of the regressor gives the full parameter
    gradient.
    """
    y = _require_y(instance)
    prec = _precision_for(instance, weights)
    return 2.0 * (prec.solve(instance.z) - y)


def _channel_quadratic(sims, rowsums, v):
    """v' J_k v for every channel, with J_k = diag(S_k 1) - S_k."""
    return np.einsum("kp,p->k", rowsums, v * v) - np.einsum(
        "p,kpq,q->k", v, sims, v
    )


def grad_pairwise(instance: CrfInstance, weights: PairwiseWeights) -> np.ndarray:
    """Gradient of the NLL with respect to each coupling coefficient."""
    y = _require_y(instance)
    prec = _precision_for(instance, weights)
    return _grad_pairwise(instance, prec, y)


def _grad_pairwise(instance, prec, y):
    sims = instance.similarities
    rowsums = sims.sum(axis=2)
    u = prec.solve(instance.z)
    inv = prec.solve(np.eye(instance.n))
    term_y = _channel_quadratic(sims, rowsums, y)
    term_u = _channel_quadratic(sims, rowsums, u)
    traces = np.einsum("kp,p->k", rowsums, np.diag(inv)) - np.einsum(
        "pq,kpq->k", inv, sims
    )
    return term_y - term_u - 0.5 * traces


def nll_with_grads(instance: CrfInstance, weights: PairwiseWeights):
    """NLL plus both gradient blocks from a single factorization.

    Returns (nll, grad wrt z, grad wrt beta); what a training step needs.
    """
    y = _require_y(instance)
    prec = _precision_for(instance, weights)
    z = instance.z
    u = prec.solve(z)
    value = (
        float(y @ (prec.matrix @ y))
        - 2.0 * float(z @ y)
        + float(z @ u)
        - 0.5 * prec.logdet
        + 0.5 * instance.n * np.log(np.pi)
    )
    return value, 2.0 * (u - y), _grad_pairwise(instance, prec, y)
