"""State-space models, parameter priors and the alpha-stable sampler.

Two production models share the same mean-reverting AR(1) log-volatility
state and differ only in the observation channel:

* ``gsv`` -- Gaussian log-returns, ``y_t ~ N(0, exp(x_t))``.
* ``asv`` -- symmetric alpha-stable log-returns, ``y_t ~ A(alpha, exp(x_t/2))``.

A third model, ``lgss`` (linear-Gaussian observations ``y_t ~ N(x_t,
sigma_e^2)``), keeps the same latent dynamics and exists so the particle
filter can be validated against an exact Kalman-filter likelihood.

Scale convention for the stable observation channel: the per-step scale is
``gamma_t = exp(x_t / 2)``, so at ``alpha = 2`` the observation variance is
``2 * exp(x_t)`` (the stable family at alpha=2 is Gaussian with variance
``2 * gamma^2``). This is the stable-scale reading; it is fixed once here
and used by the simulator and all filters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, gammaln, ndtr

from .errors import ConfigurationError, DomainError

GSV = "gsv"
ASV = "asv"
LGSS = "lgss"

MODEL_COMPONENTS = {
    GSV: ("mu", "phi", "sigma_v"),
    ASV: ("mu", "phi", "sigma_v", "alpha"),
    LGSS: ("mu", "phi", "sigma_v", "sigma_e"),
}

_LOG_2PI = np.log(2.0 * np.pi)


# ---------------------------------------------------------------------------
# Parameter vectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThetaVector:
    """A named parameter point for one of the registered models."""

    model_id: str
    values: tuple

    def __post_init__(self):
        if self.model_id not in MODEL_COMPONENTS:
            raise ConfigurationError(f"unknown model id {self.model_id!r}")
        names = MODEL_COMPONENTS[self.model_id]
        vals = tuple(float(v) for v in self.values)
        if len(vals) != len(names):
            raise ConfigurationError(
                f"model {self.model_id!r} expects components {names}, got {len(vals)} values"
            )
        object.__setattr__(self, "values", vals)

    @property
    def names(self):
        return MODEL_COMPONENTS[self.model_id]

    def __getitem__(self, name: str) -> float:
        try:
            return self.values[self.names.index(name)]
        except ValueError:
            raise KeyError(name) from None

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.values))

    def replace_values(self, values) -> "ThetaVector":
        return ThetaVector(self.model_id, tuple(values))

    def is_valid(self) -> bool:
        """True when the point lies in the model's parameter domain.

        Requires ``phi**2 < 1`` (stationary initial law), ``sigma_v > 0``,
        ``alpha`` in (0, 2) for the stable model and ``sigma_e > 0`` for the
        linear-Gaussian one.
        """
        d = self.as_dict()
        if not np.all(np.isfinite(self.values)):
            return False
        if not (-1.0 < d["phi"] < 1.0) or not (d["sigma_v"] > 0.0):
            return False
        if self.model_id == ASV and not (0.0 < d["alpha"] < 2.0):
            return False
        if self.model_id == LGSS and not (d["sigma_e"] > 0.0):
            return False
        return True

    def require_valid(self):
        if not self.is_valid():
            raise DomainError(
                f"theta {self.as_dict()} outside the domain of model {self.model_id!r}"
            )


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Normal:
    mean: float
    std: float

    support = (-np.inf, np.inf)

    def log_density(self, x: float) -> float:
        z = (x - self.mean) / self.std
        return -0.5 * (_LOG_2PI + z * z) - np.log(self.std)


@dataclass(frozen=True)
class TruncatedNormal:
    """Gaussian restricted to ``[lower, upper]`` and renormalised."""

    mean: float
    std: float
    lower: float
    upper: float

    @property
    def support(self):
        return (self.lower, self.upper)

    def log_density(self, x: float) -> float:
        if not (self.lower <= x <= self.upper):
            return -np.inf
        z = (x - self.mean) / self.std
        mass = ndtr((self.upper - self.mean) / self.std) - ndtr((self.lower - self.mean) / self.std)
        return -0.5 * (_LOG_2PI + z * z) - np.log(self.std) - np.log(mass)


@dataclass(frozen=True)
class Gamma:
    """Gamma with density ``rate^shape x^(shape-1) e^(-rate x) / G(shape)`` (mean shape/rate)."""

    shape: float
    rate: float

    support = (0.0, np.inf)

    def log_density(self, x: float) -> float:
        if x <= 0.0:
            return -np.inf
        return (
            self.shape * np.log(self.rate)
            - gammaln(self.shape)
            + (self.shape - 1.0) * np.log(x)
            - self.rate * x
        )


@dataclass(frozen=True)
class ScaledBeta:
    """Beta(shape1, shape2) on ``x / scale``, supported on (0, scale).

    The constant Jacobian ``1/scale`` is included so this is a proper
    density for ``x`` itself.
    """

    shape1: float
    shape2: float
    scale: float = 1.0

    @property
    def support(self):
        return (0.0, self.scale)

    def log_density(self, x: float) -> float:
        if not (0.0 < x < self.scale):
            return -np.inf
        z = x / self.scale
        return (
            (self.shape1 - 1.0) * np.log(z)
            + (self.shape2 - 1.0) * np.log1p(-z)
            - betaln(self.shape1, self.shape2)
            - np.log(self.scale)
        )


PRIOR_FAMILIES = {
    "normal": Normal,
    "truncated_normal": TruncatedNormal,
    "gamma": Gamma,
    "scaled_beta": ScaledBeta,
}


class PriorSpec:
    """Independent per-component prior, keyed by component name."""

    def __init__(self, components: dict):
        self.components = dict(components)

    def names(self):
        return tuple(self.components)

    def log_density(self, theta: ThetaVector) -> float:
        if tuple(self.components) != theta.names:
            raise ConfigurationError(
                f"prior components {tuple(self.components)} do not match theta components {theta.names}"
            )
        total = 0.0
        for name, value in zip(theta.names, theta.values):
            total += self.components[name].log_density(value)
            if total == -np.inf:
                return -np.inf
        return total


def log_prior(theta: ThetaVector, prior: PriorSpec) -> float:
    """Sum of component log prior densities; ``-inf`` outside the support."""
    return prior.log_density(theta)


def default_prior(model_id: str) -> PriorSpec:
    """The reference priors used throughout: N(0, 0.2^2) for mu, a (-1, 1)
    truncated N(0.9, 0.05^2) for phi, Gamma(2, 20) for sigma_v and, for the
    stable model, a Beta(20, 2) on alpha/2."""
    base = {
        "mu": Normal(0.0, 0.2),
        "phi": TruncatedNormal(0.9, 0.05, -1.0, 1.0),
        "sigma_v": Gamma(2.0, 20.0),
    }
    if model_id == GSV:
        return PriorSpec(base)
    if model_id == ASV:
        base["alpha"] = ScaledBeta(20.0, 2.0, 2.0)
        return PriorSpec(base)
    raise ConfigurationError(f"no default prior for model {model_id!r}")


# ---------------------------------------------------------------------------
# Search box
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchBox:
    """Per-component bounds over which the optimisers operate."""

    names: tuple
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if not (len(self.names) == len(lo) == len(hi)):
            raise ConfigurationError("search box names/lower/upper lengths differ")
        for name, a, b in zip(self.names, lo, hi):
            if not a < b:
                raise ConfigurationError(f"search box for {name!r} has lower {a} >= upper {b}")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.names)

    def lower_array(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=float)

    def upper_array(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=float)

    def widths(self) -> np.ndarray:
        return self.upper_array() - self.lower_array()

    def contains(self, point, atol: float = 0.0) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lower_array() - atol) and np.all(p <= self.upper_array() + atol))

    def clamp(self, point) -> np.ndarray:
        return np.clip(np.asarray(point, dtype=float), self.lower_array(), self.upper_array())

    @staticmethod
    def from_dict(names, bounds: dict) -> "SearchBox":
        missing = [n for n in names if n not in bounds]
        if missing:
            raise ConfigurationError(f"search box missing components {missing}")
        return SearchBox(
            tuple(names),
            tuple(bounds[n][0] for n in names),
            tuple(bounds[n][1] for n in names),
        )


def default_search_box(model_id: str) -> SearchBox:
    bounds = {"mu": (0.0, 1.0), "phi": (0.0, 1.0), "sigma_v": (0.01, 1.0)}
    if model_id == ASV:
        bounds["alpha"] = (1.2, 2.0)
    elif model_id != GSV:
        raise ConfigurationError(f"no default search box for model {model_id!r}")
    return SearchBox.from_dict(MODEL_COMPONENTS[model_id], bounds)


# ---------------------------------------------------------------------------
# Alpha-stable sampling
# ---------------------------------------------------------------------------

def stable_transform(v1, v2, alpha: float):
    """Map ``v1 ~ Exp(1)`` and ``v2 ~ U(-pi/2, pi/2)`` to a standard (unit
    scale) zero-mean symmetric alpha-stable draw, for ``alpha != 1``.

    Vectorised over ``v1``/``v2``. The map is
    ``sin(alpha v2) / cos(v2)^(1/alpha) * [cos((alpha-1) v2) / v1]^((1-alpha)/alpha)``.
    """
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    t1 = np.sin(alpha * v2) / np.cos(v2) ** (1.0 / alpha)
    t2 = (np.cos((alpha - 1.0) * v2) / v1) ** ((1.0 - alpha) / alpha)
    return t1 * t2


def stable_sample(alpha: float, gamma: float, rng: np.random.Generator, size=None):
    """Draw from the zero-mean symmetric alpha-stable law ``A(alpha, gamma)``.

    Parameters
    ----------
    alpha : float
        Stability parameter in (0, 2), excluding 1 (the Cauchy branch of
        the transformation is not implemented).
    gamma : float
        Scale parameter, > 0. At ``alpha = 2`` the law is Gaussian with
        variance ``2 * gamma**2``.
    rng : numpy.random.Generator
    size : int or tuple, optional
        Draw shape; a scalar is returned when omitted.
    """
    if not (0.0 < alpha < 2.0 or alpha == 2.0):
        raise DomainError(f"stability parameter alpha={alpha} outside (0, 2]")
    if alpha == 1.0:
        raise DomainError("alpha = 1 (Cauchy branch) is not supported")
    if not gamma > 0.0:
        raise DomainError(f"scale gamma={gamma} must be positive")
    v1 = rng.standard_exponential(size)
    v2 = rng.uniform(-np.pi / 2.0, np.pi / 2.0, size)
    out = gamma * stable_transform(v1, v2, alpha)
    return float(out) if size is None else out


# ---------------------------------------------------------------------------
# Observation densities and simulation
# ---------------------------------------------------------------------------

def gsv_log_obs_density(y, x):
    """``log N(y; 0, exp(x))``, the Gaussian-return observation log-density."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    out = -0.5 * (_LOG_2PI + x + y * y * np.exp(-x))
    return float(out) if out.ndim == 0 else out


def simulate(model_id: str, theta: ThetaVector, T: int, rng: np.random.Generator):
    """Simulate states ``x_{0:T}`` and observations ``y_{1:T}``.

    The initial state is drawn from the stationary law
    ``N(mu, sigma_v^2 / (1 - phi^2))`` and the state follows
    ``x_{t+1} = mu + phi (x_t - mu) + sigma_v eta_t``. Observations are
    generated from the model's channel at ``x_t`` for ``t = 1..T``.

    Returns
    -------
    (states, observations) : two float arrays of lengths ``T + 1`` and ``T``.
    """
    if model_id != theta.model_id:
        raise ConfigurationError(f"theta belongs to {theta.model_id!r}, not {model_id!r}")
    if T < 1:
        raise DomainError(f"T={T} must be >= 1")
    theta.require_valid()
    d = theta.as_dict()
    mu, phi, sigma_v = d["mu"], d["phi"], d["sigma_v"]

    eta = rng.standard_normal(T + 1)
    x = np.empty(T + 1)
    x[0] = mu + sigma_v / np.sqrt(1.0 - phi * phi) * eta[0]
    for t in range(1, T + 1):
        x[t] = mu + phi * (x[t - 1] - mu) + sigma_v * eta[t]

    if model_id == GSV:
        z = rng.standard_normal(T)
        y = np.exp(x[1:] / 2.0) * z
    elif model_id == ASV:
        y = stable_sample(d["alpha"], 1.0, rng, size=T) * np.exp(x[1:] / 2.0)
    else:
        e = rng.standard_normal(T)
        y = x[1:] + d["sigma_e"] * e
    return x, y
