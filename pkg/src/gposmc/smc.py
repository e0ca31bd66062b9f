"""Bootstrap particle filtering and the noisy log-posterior estimates
built on it.

Two weighting schemes share one kernel: the exact observation density
(Gaussian log-returns, or the linear-Gaussian validation model) and the
tolerance-kernel variant that matches simulated observations against a
perturbed copy of the data. The latter is what makes intractable
likelihoods (the stable-return model) usable.

All randomness is drawn up front from a single generator in a fixed
order (initial-state noise, transition noise, observation/auxiliary
draws, resampling uniforms), so a filter pass is reproducible from its
RngStream alone and does not depend on how the arithmetic is scheduled.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _backend, _filter_np
from .errors import ConfigurationError, ContractViolation, DomainError
from .models import ASV, GSV, LGSS, PriorSpec, ThetaVector, log_prior
from .rng import RngStream

_PSI_CODES = {
    "identity": _backend.PSI_IDENTITY,
    "arctan": _backend.PSI_ARCTAN,
}
_PSI_FUNCS = {
    "identity": lambda y: y,
    "arctan": np.arctan,
}

# substream roles under an evaluator's root stream
_KEY_PERTURB = 0
_KEY_EVAL = 1


@dataclass(frozen=True)
class AbcConfig:
    """Tolerance-kernel settings: noise scale, data transform, kernel family."""

    epsilon: float
    psi: str = "identity"
    kernel: str = "gaussian"

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")
        if self.psi not in _PSI_CODES:
            raise ConfigurationError(
                f"unknown psi transform {self.psi!r}, expected one of {sorted(_PSI_CODES)}"
            )
        if self.kernel != "gaussian":
            raise ConfigurationError(f"unsupported kernel {self.kernel!r}")


def default_abc_config(model_id: str) -> AbcConfig:
    """Reference tolerances: 0.20 with the identity transform for the
    Gaussian-return model, 0.10 with arctan for the stable-return model."""
    if model_id == GSV:
        return AbcConfig(epsilon=0.20, psi="identity")
    if model_id == ASV:
        return AbcConfig(epsilon=0.10, psi="arctan")
    raise ConfigurationError(f"no default ABC config for model {model_id!r}")


@dataclass(frozen=True)
class LogPosteriorEstimate:
    """One noisy evaluation of the log-posterior at a parameter point.

    ``xi = loglik + log_prior`` always; ``xi = -inf`` marks either a point
    outside the prior support (``loglik`` reported as 0, the filter never
    ran) or a degenerate filter pass (``degenerate_step`` is the 1-based
    time index where every particle weight vanished).
    """

    theta: ThetaVector
    xi: float
    loglik: float
    log_prior: float
    n_particles: int
    epsilon: Optional[float]
    seed: tuple
    degenerate_step: int = 0


@dataclass
class ParticleSystem:
    """Recorded filter history: states after resampling/propagation, the
    ancestor picks, and the per-step weights (log and normalised)."""

    particles: np.ndarray  # (T+1, N); row 0 is the initial draw
    ancestors: np.ndarray  # (T, N) int64 indices into the previous row
    log_weights: np.ndarray  # (T, N) unnormalised
    weights: np.ndarray  # (T, N) normalised; all-zero rows after degeneracy

    @property
    def n_particles(self) -> int:
        return self.particles.shape[1]


def perturb_observations(y, cfg: AbcConfig, rng: np.random.Generator) -> np.ndarray:
    """Transform the data and add one fixed draw of kernel noise.

    Drawn once per inference run and reused across every posterior
    evaluation, so the estimated surface stays fixed while the optimiser
    works on it.
    """
    y = np.asarray(y, dtype=float)
    return _PSI_FUNCS[cfg.psi](y) + cfg.epsilon * rng.standard_normal(y.shape)


def systematic_resample(weights, u: float) -> np.ndarray:
    """Ancestor indices for one systematic-resampling pass.

    ``weights`` must already be normalised (checked to 1e-9); ``u`` is the
    single uniform offset placing the grid (u + k)/N on the cumulative
    weights.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.shape[0] < 1:
        raise ConfigurationError("weights must be a non-empty vector")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ContractViolation(f"weights sum to {w.sum()!r}, expected 1 within 1e-9")
    if not 0.0 <= u < 1.0:
        raise DomainError(f"offset u must lie in [0, 1), got {u}")
    return _filter_np.systematic_ancestors(w, float(u))


def _kernel_inputs(mode: int, T: int, n_particles: int, rng: np.random.Generator):
    """Pre-draw every random number a filter pass consumes, in fixed order."""
    eta0 = rng.standard_normal(n_particles)
    eta = rng.standard_normal((T, n_particles))
    if mode == _backend.MODE_GAUSS_ABC:
        aux1 = rng.standard_normal((T, n_particles))
        aux2 = np.zeros((1, 1))
    elif mode == _backend.MODE_STABLE_ABC:
        aux1 = rng.standard_exponential((T, n_particles))
        aux2 = rng.uniform(-0.5 * math.pi, 0.5 * math.pi, (T, n_particles))
    else:
        aux1 = np.zeros((1, 1))
        aux2 = np.zeros((1, 1))
    u_res = rng.random(T)
    return eta0, eta, aux1, aux2, u_res


def _run_filter(mode, psi_code, theta: ThetaVector, extra, epsilon, y,
                n_particles, stream: RngStream, record):
    y = np.ascontiguousarray(y, dtype=float)
    T = y.shape[0]
    eta0, eta, aux1, aux2, u_res = _kernel_inputs(mode, T, n_particles, stream.generator())
    xhat = np.empty(T)
    if record:
        particles = np.zeros((T + 1, n_particles))
        ancestors = np.zeros((T, n_particles), dtype=np.int64)
        logw = np.zeros((T, n_particles))
        w = np.zeros((T, n_particles))
    else:
        particles = np.zeros((1, 1))
        ancestors = np.zeros((1, 1), dtype=np.int64)
        logw = np.zeros((1, 1))
        w = np.zeros((1, 1))
    loglik, degenerate = _backend.run_filter(
        mode, psi_code,
        theta["mu"], theta["phi"], theta["sigma_v"], extra, epsilon,
        y, eta0, eta, aux1, aux2, u_res,
        xhat, int(record), particles, ancestors, logw, w,
    )
    system = ParticleSystem(particles, ancestors, logw, w) if record else None
    return loglik, degenerate, xhat, system


def _gated(theta, prior, n_particles, epsilon, stream, T, record):
    """Out-of-support shortcut: xi = -inf with no filtering."""
    est = LogPosteriorEstimate(
        theta=theta, xi=-np.inf, loglik=0.0, log_prior=-np.inf,
        n_particles=n_particles, epsilon=epsilon, seed=(stream.seed, stream.key),
    )
    xhat = np.full(T, np.nan)
    return (est, xhat, None) if record else (est, xhat)


def _assemble(theta, loglik, lp, degenerate, n_particles, epsilon, stream, xhat, system, record):
    xi = loglik + lp
    est = LogPosteriorEstimate(
        theta=theta, xi=xi, loglik=loglik, log_prior=lp,
        n_particles=n_particles, epsilon=epsilon, seed=(stream.seed, stream.key),
        degenerate_step=int(degenerate),
    )
    return (est, xhat, system) if record else (est, xhat)


def smc_abc_log_posterior(model_id: str, theta: ThetaVector, y_perturbed,
                          n_particles: int, cfg: AbcConfig, prior: PriorSpec,
                          stream: RngStream, record: bool = False):
    """Noisy log-posterior of ``theta`` given data already perturbed by
    ``perturb_observations``; returns ``(estimate, filtered_states)`` and,
    with ``record=True``, the full ParticleSystem as a third element.

    The weighting kernel compares the (transformed) simulated observation
    against the perturbed data point under a Gaussian of scale epsilon.
    """
    n_particles = int(n_particles)
    if n_particles < 2:
        raise ConfigurationError(f"need at least 2 particles, got {n_particles}")
    if model_id == GSV:
        mode, extra = _backend.MODE_GAUSS_ABC, 0.0
    elif model_id == ASV:
        mode, extra = _backend.MODE_STABLE_ABC, None  # filled from theta below
    else:
        raise DomainError(f"no ABC filter for model {model_id!r}")

    y_perturbed = np.asarray(y_perturbed, dtype=float)
    valid = theta.is_valid()
    lp = log_prior(theta, prior) if valid else -np.inf
    if lp == -np.inf:
        return _gated(theta, prior, n_particles, cfg.epsilon, stream,
                      y_perturbed.shape[0], record)
    if extra is None:
        extra = theta["alpha"]
    loglik, degenerate, xhat, system = _run_filter(
        mode, _PSI_CODES[cfg.psi], theta, extra, cfg.epsilon,
        y_perturbed, n_particles, stream, record)
    return _assemble(theta, loglik, lp, degenerate, n_particles, cfg.epsilon,
                     stream, xhat, system, record)


def bpf_log_posterior(model_id: str, theta: ThetaVector, y, n_particles: int,
                      prior: PriorSpec, stream: RngStream, record: bool = False):
    """Same contract as ``smc_abc_log_posterior`` but weighting with the
    exact observation density; only models that have one are accepted."""
    n_particles = int(n_particles)
    if n_particles < 2:
        raise ConfigurationError(f"need at least 2 particles, got {n_particles}")
    if model_id == GSV:
        mode, extra = _backend.MODE_GSV_DENSITY, 0.0
    elif model_id == LGSS:
        mode, extra = _backend.MODE_LGSS_DENSITY, None
    else:
        raise DomainError(
            f"model {model_id!r} has no evaluable observation density; use the ABC filter"
        )

    y = np.asarray(y, dtype=float)
    valid = theta.is_valid()
    lp = log_prior(theta, prior) if valid else -np.inf
    if lp == -np.inf:
        return _gated(theta, prior, n_particles, None, stream, y.shape[0], record)
    if extra is None:
        extra = theta["sigma_e"]
    loglik, degenerate, xhat, system = _run_filter(
        mode, _backend.PSI_IDENTITY, theta, extra, 0.0, y, n_particles, stream, record)
    return _assemble(theta, loglik, lp, degenerate, n_particles, None,
                     stream, xhat, system, record)


class PosteriorEvaluator:
    """Callable mapping parameter values to LogPosteriorEstimates.

    Evaluation k runs on the substream ``stream.child(1, k)``, so a
    sequence of calls is reproducible from the root seed and insensitive
    to what happens between calls. When an AbcConfig is given the data
    perturbation is drawn once on ``stream.child(0)`` and frozen.
    """

    def __init__(self, model_id: str, y, n_particles: int, prior: PriorSpec,
                 stream: RngStream, abc: Optional[AbcConfig] = None):
        self.model_id = model_id
        self.n_particles = int(n_particles)
        self.prior = prior
        self.stream = stream
        self.abc = abc
        y = np.asarray(y, dtype=float)
        if abc is None:
            self.y_work = y
        else:
            self.y_work = perturb_observations(
                y, abc, stream.child(_KEY_PERTURB).generator())
        self.calls = 0

    def theta(self, values) -> ThetaVector:
        return ThetaVector(self.model_id, tuple(np.asarray(values, dtype=float)))

    def __call__(self, values) -> LogPosteriorEstimate:
        theta = self.theta(values)
        child = self.stream.child(_KEY_EVAL, self.calls)
        self.calls += 1
        if self.abc is None:
            est, _ = bpf_log_posterior(
                self.model_id, theta, self.y_work, self.n_particles, self.prior, child)
        else:
            est, _ = smc_abc_log_posterior(
                self.model_id, theta, self.y_work, self.n_particles, self.abc,
                self.prior, child)
        return est

    def filtered_states(self, values, stream: Optional[RngStream] = None) -> np.ndarray:
        """One extra filter pass at ``values`` returning the filtered state
        path (used by the volatility-residual stage, not counted as an
        optimiser evaluation)."""
        theta = self.theta(values)
        child = stream if stream is not None else self.stream.child(_KEY_EVAL, self.calls)
        if self.abc is None:
            _, xhat = bpf_log_posterior(
                self.model_id, theta, self.y_work, self.n_particles, self.prior, child)
        else:
            _, xhat = smc_abc_log_posterior(
                self.model_id, theta, self.y_work, self.n_particles, self.abc,
                self.prior, child)
        return xhat
