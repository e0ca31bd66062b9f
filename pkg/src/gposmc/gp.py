"""Gaussian-process regression over (parameter point, log-posterior value)
pairs.

Zero prior mean with a kernel that is the sum of a constant (bias) term
and an anisotropic Matern 5/2 term. The bias term absorbs the unknown
offset of a log-posterior surface; the Matern term gives the twice
differentiable local structure the optimiser needs. Hyperparameters are
chosen by maximising the log marginal likelihood in log space with
analytic gradients.
"""

import logging
import math

import numpy as np
from dataclasses import dataclass
from scipy import linalg as sla
from scipy import optimize as sopt

from .errors import ContractViolation, DomainError, NumericalError, StateError

_log = logging.getLogger(__name__)

_SQRT5 = math.sqrt(5.0)
_LOG_2PI = math.log(2.0 * math.pi)

# factorisation jitter: relative seed value, doubled on failure
_JITTER_REL = 1e-10
_JITTER_TRIES = 6

# empirical-Bayes bounds, relative to the search-box width per dimension
_LS_LOWER_REL = 1e-3
_LS_UPPER_REL = 10.0
_VAR_LOWER = 1e-6
_VAR_UPPER = 1e6


@dataclass(frozen=True)
class GpHyperparameters:
    """Kernel and noise settings: sum-kernel variances, per-dimension
    length scales, observation noise variance."""

    bias_variance: float
    matern_variance: float
    length_scales: tuple
    noise_variance: float

    def __post_init__(self):
        ls = tuple(float(v) for v in self.length_scales)
        object.__setattr__(self, "length_scales", ls)
        if not self.bias_variance >= 0.0:
            raise DomainError(f"bias_variance must be >= 0, got {self.bias_variance}")
        if not self.matern_variance > 0.0:
            raise DomainError(f"matern_variance must be > 0, got {self.matern_variance}")
        if not all(v > 0.0 for v in ls):
            raise DomainError(f"length scales must be > 0, got {ls}")
        if not self.noise_variance > 0.0:
            raise DomainError(f"noise_variance must be > 0, got {self.noise_variance}")

    @property
    def dim(self) -> int:
        return len(self.length_scales)

    def log_vector(self) -> np.ndarray:
        """(log bias, log matern, log ls_1..ls_p, log noise)."""
        return np.log(np.concatenate((
            [max(self.bias_variance, 1e-300), self.matern_variance],
            self.length_scales, [self.noise_variance])))

    @staticmethod
    def from_log_vector(v) -> "GpHyperparameters":
        v = np.asarray(v, dtype=float)
        return GpHyperparameters(
            bias_variance=float(np.exp(v[0])),
            matern_variance=float(np.exp(v[1])),
            length_scales=tuple(np.exp(v[2:-1])),
            noise_variance=float(np.exp(v[-1])),
        )


class SurrogateDataset:
    """Finite (points, values) pairs the surrogate regresses on.

    Values must be finite; infinite posterior evaluations are floored
    with ``floor_value`` before they get here.
    """

    def __init__(self, points, values):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        values = np.asarray(values, dtype=float).ravel()
        if points.shape[0] != values.shape[0]:
            raise ContractViolation(
                f"{points.shape[0]} points but {values.shape[0]} values")
        if values.size and not np.all(np.isfinite(values)):
            raise ContractViolation("dataset values must be finite; floor first")
        if points.size and not np.all(np.isfinite(points)):
            raise ContractViolation("dataset points must be finite")
        self.points = points
        self.values = values

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1] if self.points.size else 0

    def with_point(self, point, value) -> "SurrogateDataset":
        point = np.asarray(point, dtype=float).reshape(1, -1)
        if self.k == 0:
            return SurrogateDataset(point, [value])
        return SurrogateDataset(
            np.vstack((self.points, point)), np.append(self.values, value))


def floor_value(finite_values, count: int = 1):
    """Substitute for -inf evaluations: min finite value minus three times
    the finite range (or minus 1 when the range is empty/degenerate)."""
    finite = np.asarray(finite_values, dtype=float)
    finite = finite[np.isfinite(finite)]
    if finite.size == 0:
        raise NumericalError("cannot floor: no finite values observed yet")
    lo, hi = finite.min(), finite.max()
    rng = hi - lo
    sub = lo - (3.0 * rng if rng > 0 else 1.0)
    return sub if count == 1 else np.full(count, sub)


def floor_values(values):
    """Vectorised flooring of a raw value array that may contain -inf."""
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values)
    if not bad.any():
        return values.copy()
    out = values.copy()
    out[bad] = floor_value(values)
    return out


def _scaled_sqdist(X, Y, length_scales):
    ls = np.asarray(length_scales, dtype=float)
    Xs = X / ls
    Ys = Y / ls
    d2 = (Xs * Xs).sum(axis=1)[:, None] + (Ys * Ys).sum(axis=1)[None, :] - 2.0 * Xs @ Ys.T
    return np.maximum(d2, 0.0)


def _matern52(r):
    return (1.0 + _SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-_SQRT5 * r)


def kernel_matrix(X, Y, hyp: GpHyperparameters) -> np.ndarray:
    """Cross-covariance between the rows of X and Y."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != hyp.dim or Y.shape[1] != hyp.dim:
        raise DomainError(
            f"points of dimension {X.shape[1]}/{Y.shape[1]} vs hyperparameters of dimension {hyp.dim}")
    r = np.sqrt(_scaled_sqdist(X, Y, hyp.length_scales))
    return hyp.bias_variance + hyp.matern_variance * _matern52(r)


def kernel(x, y, hyp: GpHyperparameters) -> float:
    return float(kernel_matrix(np.atleast_2d(x), np.atleast_2d(y), hyp)[0, 0])


def _factorise(Ky):
    """Lower Cholesky factor with escalating diagonal jitter."""
    k = Ky.shape[0]
    jitter = _JITTER_REL * float(np.mean(np.diag(Ky)))
    bump = 0.0
    for attempt in range(_JITTER_TRIES + 1):
        try:
            L = sla.cholesky(Ky + bump * np.eye(k), lower=True)
            return L, bump
        except sla.LinAlgError:
            bump = jitter if bump == 0.0 else 2.0 * bump
    raise NumericalError(
        f"covariance factorisation failed after {_JITTER_TRIES} jitter doublings")


class GpModel:
    """Dataset plus hyperparameters with a cached Cholesky factorisation.

    Immutable once fitted; growing the dataset means building a new model.
    """

    def __init__(self, dataset: SurrogateDataset, hyp: GpHyperparameters):
        self.dataset = dataset
        self.hyp = hyp
        self._chol = None
        self._alpha = None
        self._jitter = 0.0

    def fit(self) -> "GpModel":
        if self.dataset.k == 0:
            self._chol = np.zeros((0, 0))
            self._alpha = np.zeros(0)
            return self
        Ky = kernel_matrix(self.dataset.points, self.dataset.points, self.hyp)
        Ky[np.diag_indices_from(Ky)] += self.hyp.noise_variance
        self._chol, self._jitter = _factorise(Ky)
        self._alpha = sla.cho_solve((self._chol, True), self.dataset.values)
        return self

    @property
    def fitted(self) -> bool:
        return self._chol is not None

    def predict(self, X):
        """Predictive mean, latent variance and noisy variance at rows of X.

        Scalars come back for a single point, arrays for a batch.
        """
        if not self.fitted:
            raise StateError("model not fitted; call fit() first")
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        prior_var = self.hyp.bias_variance + self.hyp.matern_variance
        if self.dataset.k == 0:
            mean = np.zeros(X.shape[0])
            var = np.full(X.shape[0], prior_var)
        else:
            Ks = kernel_matrix(X, self.dataset.points, self.hyp)
            mean = Ks @ self._alpha
            v = sla.solve_triangular(self._chol, Ks.T, lower=True)
            var = prior_var - np.einsum("ij,ij->j", v, v)
            low = var < -1e-10 * max(prior_var, 1.0)
            if low.any():
                _log.warning("predictive variance clamped from %s", var[low].min())
            var = np.maximum(var, 0.0)
        noisy = var + self.hyp.noise_variance
        if single:
            return float(mean[0]), float(var[0]), float(noisy[0])
        return mean, var, noisy

    def log_marginal_likelihood(self) -> float:
        if not self.fitted:
            raise StateError("model not fitted; call fit() first")
        k = self.dataset.k
        if k == 0:
            return 0.0
        quad = float(self.dataset.values @ self._alpha)
        logdet = 2.0 * float(np.sum(np.log(np.diag(self._chol))))
        return -0.5 * quad - 0.5 * logdet - 0.5 * k * _LOG_2PI


def gp_predict(model: GpModel, theta_star):
    return model.predict(theta_star)


def gp_log_marginal_likelihood(dataset: SurrogateDataset, hyp: GpHyperparameters) -> float:
    if dataset.k < 1:
        raise ContractViolation("marginal likelihood needs at least one point")
    return GpModel(dataset, hyp).fit().log_marginal_likelihood()


def _lml_and_grad(dataset: SurrogateDataset, log_hyp):
    """Log marginal likelihood and its gradient w.r.t. the log parameters.

    d/dlam = 0.5 tr((aa' - Ky^{-1}) dKy/dlam) with a = Ky^{-1} y.
    """
    hyp = GpHyperparameters.from_log_vector(log_hyp)
    X = dataset.points
    y = dataset.values
    k = dataset.k
    r = np.sqrt(_scaled_sqdist(X, X, hyp.length_scales))
    e = np.exp(-_SQRT5 * r)
    matern = hyp.matern_variance * (1.0 + _SQRT5 * r + (5.0 / 3.0) * r * r) * e
    Ky = hyp.bias_variance + matern
    Ky[np.diag_indices_from(Ky)] += hyp.noise_variance
    L, _ = _factorise(Ky)
    alpha = sla.cho_solve((L, True), y)
    lml = (-0.5 * float(y @ alpha)
           - float(np.sum(np.log(np.diag(L))))
           - 0.5 * k * _LOG_2PI)

    Kinv = sla.cho_solve((L, True), np.eye(k))
    M = np.outer(alpha, alpha) - Kinv

    grad = np.empty(2 + hyp.dim + 1)
    # bias: dKy/dlog b = b * ones
    grad[0] = 0.5 * hyp.bias_variance * float(M.sum())
    # matern amplitude: dKy/dlog s2 = matern part
    grad[1] = 0.5 * float((M * matern).sum())
    # length scales: dKy/dlog l_d = s2 (5/3)(1+sqrt5 r) e^{-sqrt5 r} (D_d/l_d)^2
    common = hyp.matern_variance * (5.0 / 3.0) * (1.0 + _SQRT5 * r) * e
    for d in range(hyp.dim):
        delta = (X[:, d][:, None] - X[:, d][None, :]) / hyp.length_scales[d]
        grad[2 + d] = 0.5 * float((M * (common * delta * delta)).sum())
    # noise: dKy/dlog n = n * I
    grad[-1] = 0.5 * hyp.noise_variance * float(np.trace(M))
    return lml, grad


def _eb_bounds(dim, widths):
    widths = np.asarray(widths, dtype=float)
    bounds = [(math.log(_VAR_LOWER), math.log(_VAR_UPPER)),
              (math.log(_VAR_LOWER), math.log(_VAR_UPPER))]
    for d in range(dim):
        w = max(widths[d], 1e-12)
        bounds.append((math.log(_LS_LOWER_REL * w), math.log(_LS_UPPER_REL * w)))
    bounds.append((math.log(_VAR_LOWER), math.log(_VAR_UPPER)))
    return bounds


def estimate_hyperparameters(dataset: SurrogateDataset, init: GpHyperparameters,
                             restarts: int = 3, box=None, rng=None) -> GpHyperparameters:
    """Empirical Bayes: maximise the marginal likelihood over the log
    parameters with L-BFGS-B from ``init`` plus random restarts.

    Never returns hyperparameters whose marginal likelihood is below
    ``init``'s; when no start improves on it, ``init`` comes back and a
    warning is logged.
    """
    if dataset.k < 2:
        raise ContractViolation("hyperparameter estimation needs at least two points")
    if restarts < 1:
        raise ContractViolation("need at least one start")
    if box is not None:
        widths = box.widths()
    else:
        widths = dataset.points.max(axis=0) - dataset.points.min(axis=0)
        widths = np.where(widths > 0, widths, 1.0)
    bounds = _eb_bounds(dataset.dim, widths)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    if rng is None:
        rng = np.random.default_rng(0)

    def cost(v):
        try:
            lml, grad = _lml_and_grad(dataset, v)
        except NumericalError:
            return 1e25, np.zeros_like(v)
        return -lml, -grad

    init_lml = gp_log_marginal_likelihood(dataset, init)
    best_v, best_lml = None, -np.inf
    start = np.clip(init.log_vector(), lo, hi)
    starts = [start]
    for _ in range(restarts - 1):
        starts.append(lo + rng.random(lo.shape) * (hi - lo))
    for s in starts:
        res = sopt.minimize(cost, s, jac=True, method="L-BFGS-B", bounds=bounds)
        if np.isfinite(res.fun) and -res.fun > best_lml:
            best_lml, best_v = -res.fun, res.x
    if best_v is None or best_lml < init_lml:
        _log.warning("hyperparameter search did not improve on the initial point")
        return init
    return GpHyperparameters.from_log_vector(best_v)


def default_hyperparameters(dataset: SurrogateDataset, box) -> GpHyperparameters:
    """Data-driven starting point: variances from the value spread,
    length scales at a third of the box width."""
    spread = float(np.var(dataset.values)) if dataset.k > 1 else 1.0
    spread = spread if spread > 0 else 1.0
    widths = np.asarray(box.widths(), dtype=float)
    return GpHyperparameters(
        bias_variance=spread,
        matern_variance=spread,
        length_scales=tuple(widths / 3.0),
        noise_variance=max(0.1 * spread, 1e-4),
    )
