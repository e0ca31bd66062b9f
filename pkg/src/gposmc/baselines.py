"""Reference inference drivers sharing the particle-filter evaluators:
random-walk pseudo-marginal Metropolis-Hastings and two-point
simultaneous-perturbation stochastic ascent.
"""

import numpy as np
from dataclasses import dataclass

from .errors import ConfigurationError, StateError
from .models import SearchBox, ThetaVector
from .rng import RngStream


@dataclass(frozen=True)
class PmhConfig:
    theta0: ThetaVector
    proposal_covariance: np.ndarray
    iterations: int
    burnin: int

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.proposal_covariance, dtype=float))
        if cov.shape[0] != cov.shape[1]:
            raise ConfigurationError("proposal covariance must be square")
        if not np.allclose(cov, cov.T):
            raise ConfigurationError("proposal covariance must be symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ConfigurationError("proposal covariance must be positive definite")
        object.__setattr__(self, "proposal_covariance", cov)
        if not 0 <= self.burnin < self.iterations:
            raise ConfigurationError(
                f"burnin {self.burnin} must lie in [0, iterations={self.iterations})")


def default_pmh_config(model_id: str, theta0: ThetaVector = None,
                       iterations: int = 15000, burnin: int = 5000) -> PmhConfig:
    """Pilot-tuned random-walk proposals for the two volatility models."""
    from .models import ASV, GSV

    if model_id == GSV:
        start = theta0 or ThetaVector(GSV, (0.10, 0.95, 0.12))
        cov = (2.562**2 / 3.0) * 1e-4 * np.diag([137.0, 7.0, 38.0])
    elif model_id == ASV:
        start = theta0 or ThetaVector(ASV, (0.22, 0.93, 0.25, 1.55))
        cov = (2.562**2 / 4.0) * 1e-3 * np.diag([26.0, 1.0, 9.0, 11.0])
    else:
        raise ConfigurationError(f"no default sampler settings for model {model_id!r}")
    return PmhConfig(theta0=start, proposal_covariance=cov,
                     iterations=iterations, burnin=burnin)


@dataclass
class PmhResult:
    chain: np.ndarray  # (iterations + 1, p), row 0 is the start
    xi_trace: np.ndarray
    accepted: np.ndarray  # bool per iteration
    acceptance_rate: float
    posterior_mean: np.ndarray
    posterior_covariance: np.ndarray
    burnin: int
    evaluations: int  # proposal evaluations, one per iteration

    @property
    def posterior_std(self) -> np.ndarray:
        return np.sqrt(np.diag(self.posterior_covariance))


def pmh_run(evaluator, cfg: PmhConfig, stream: RngStream) -> PmhResult:
    """Random-walk Metropolis on the estimated log-posterior.

    The chain reuses the stored estimate at the current point; a proposal
    with xi = -inf is always rejected. Posterior moments are taken over
    the chain rows from ``burnin`` on.
    """
    theta = np.asarray(cfg.theta0.values, dtype=float)
    p = theta.shape[0]
    est0 = evaluator(theta)
    xi = float(est0.xi)
    if not np.isfinite(xi):
        raise StateError(f"starting point {cfg.theta0.as_dict()} has xi = -inf")

    L = np.linalg.cholesky(cfg.proposal_covariance)
    rng = stream.child(0).generator()

    M = cfg.iterations
    chain = np.empty((M + 1, p))
    xi_trace = np.empty(M + 1)
    accepted = np.zeros(M, dtype=bool)
    chain[0] = theta
    xi_trace[0] = xi

    for m in range(1, M + 1):
        step = L @ rng.standard_normal(p)
        u = rng.random()
        proposal = chain[m - 1] + step
        est = evaluator(proposal)
        xi_new = float(est.xi)
        if np.isfinite(xi_new) and np.log(u) < xi_new - xi_trace[m - 1]:
            chain[m] = proposal
            xi_trace[m] = xi_new
            accepted[m - 1] = True
        else:
            chain[m] = chain[m - 1]
            xi_trace[m] = xi_trace[m - 1]

    kept = chain[cfg.burnin:]
    return PmhResult(
        chain=chain,
        xi_trace=xi_trace,
        accepted=accepted,
        acceptance_rate=float(accepted.mean()),
        posterior_mean=kept.mean(axis=0),
        posterior_covariance=np.atleast_2d(np.cov(kept, rowvar=False)),
        burnin=cfg.burnin,
        evaluations=M,
    )


@dataclass(frozen=True)
class SpsaConfig:
    a: float = 0.001
    c: float = 0.30
    A: float = 35.0
    alpha_exp: float = 0.602
    gamma_exp: float = 0.101
    iterations: int = 350

    def __post_init__(self):
        if not (self.a > 0 and self.c > 0):
            raise ConfigurationError("gains a and c must be positive")
        if not (0 < self.alpha_exp <= 1 and 0 < self.gamma_exp <= 1):
            raise ConfigurationError("gain exponents must lie in (0, 1]")
        if self.iterations < 1:
            raise ConfigurationError("need at least one iteration")


@dataclass
class SpsaResult:
    iterates: np.ndarray  # (iterations + 1, p), row 0 is the start
    skipped: np.ndarray  # bool per iteration: gradient unusable
    evaluations: int

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]


def spsa_run(evaluator, cfg: SpsaConfig, theta0, box: SearchBox,
             stream: RngStream) -> SpsaResult:
    """Stochastic ascent with two-point random-direction gradients.

    Each iteration probes theta +- c_n * Delta (Delta Rademacher), forms
    the gradient estimate componentwise, and steps with gain a_n; iterates
    are clamped to the box. Probe points are projected just inside the box
    (the posterior is typically not evaluable on the boundary itself) while
    the gains keep their nominal values. Iterations where either probe
    still returned -inf are skipped (the probes count as evaluations).
    """
    theta = box.clamp(np.asarray(theta0, dtype=float))
    p = theta.shape[0]
    rng = stream.child(0).generator()
    iterates = np.empty((cfg.iterations + 1, p))
    iterates[0] = theta
    skipped = np.zeros(cfg.iterations, dtype=bool)
    evals = 0
    probe_lo = box.lower_array() + 1e-6 * box.widths()
    probe_hi = box.upper_array() - 1e-6 * box.widths()

    for n in range(cfg.iterations):
        a_n = cfg.a / (cfg.A + n + 1.0) ** cfg.alpha_exp
        c_n = cfg.c / (n + 1.0) ** cfg.gamma_exp
        delta = rng.integers(0, 2, size=p) * 2.0 - 1.0
        plus = evaluator(np.clip(theta + c_n * delta, probe_lo, probe_hi))
        minus = evaluator(np.clip(theta - c_n * delta, probe_lo, probe_hi))
        evals += 2
        diff = float(plus.xi) - float(minus.xi)
        if not np.isfinite(diff):
            skipped[n] = True
            iterates[n + 1] = theta
            continue
        grad = diff / (2.0 * c_n) / delta
        theta = box.clamp(theta + a_n * grad)
        iterates[n + 1] = theta

    return SpsaResult(iterates=iterates, skipped=skipped, evaluations=evals)
