"""The surrogate-optimisation loop: Latin hypercube design, expected
improvement acquisition with jitter, scheduled hyperparameter refits,
and extraction of a Gaussian (Laplace) posterior approximation from the
fitted surrogate mean.
"""

import hashlib
import json
import math

import numpy as np
from dataclasses import dataclass, field
from scipy.special import ndtr

from .errors import NumericalError
from .gp import (GpHyperparameters, GpModel, SurrogateDataset,
                 default_hyperparameters, estimate_hyperparameters,
                 floor_value, floor_values)
from .models import SearchBox, ThetaVector
from .optim import DirectBudget, direct_optimize, finite_difference_hessian
from .rng import RngStream

_SIGMA_FLOOR = 1e-10
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# substream roles under a run's root stream
_KEY_DESIGN = 0
_KEY_EB = 1
_KEY_JITTER = 2


@dataclass(frozen=True)
class AcquisitionConfig:
    """Exploration offset, proposal jitter (diagonal covariance), optional
    improvement-based stopping, and the inner search budget."""

    zeta: float = 0.01
    jitter_variances: tuple = (0.01,)
    ei_threshold: float = None
    direct_budget: DirectBudget = field(default_factory=DirectBudget)

    def __post_init__(self):
        jv = tuple(float(v) for v in np.atleast_1d(self.jitter_variances))
        object.__setattr__(self, "jitter_variances", jv)
        if self.zeta < 0:
            raise NumericalError(f"zeta must be >= 0, got {self.zeta}")
        if any(v < 0 for v in jv):
            raise NumericalError("jitter variances must be >= 0")

    def jitter_std(self, dim: int) -> np.ndarray:
        jv = self.jitter_variances
        if len(jv) == 1:
            jv = jv * dim
        if len(jv) != dim:
            raise NumericalError(
                f"jitter covariance has {len(jv)} diagonal entries for dimension {dim}")
        return np.sqrt(np.asarray(jv))


def default_acquisition_config(dim: int) -> AcquisitionConfig:
    return AcquisitionConfig(zeta=0.01, jitter_variances=(0.01,) * dim)


def _ei(mean, sd, mu_max, zeta):
    """sigma*(Z Phi(Z) + phi(Z)); zero wherever sd is at the floor."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    out = np.zeros(np.broadcast(mean, sd).shape)
    live = sd > _SIGMA_FLOOR
    z = (mean[live] - mu_max - zeta) / sd[live]
    out[live] = sd[live] * (z * ndtr(z) + _INV_SQRT_2PI * np.exp(-0.5 * z * z))
    return out


def expected_improvement(point, model: GpModel, mu_max: float, zeta: float) -> float:
    mean, var, _ = model.predict(np.atleast_2d(point))
    return float(_ei(mean, np.sqrt(var), mu_max, zeta)[0])


@dataclass
class GpoRunState:
    """Everything the acquisition loop carries between iterations."""

    iteration: int
    dataset: SurrogateDataset
    hyp: GpHyperparameters
    model: GpModel
    mu_max: float
    map_point: np.ndarray  # sampled point with the highest surrogate mean
    raw_values: list  # unfloored evaluations, -inf preserved
    trace: list
    refit_interval: int
    design_size: int

    @property
    def evaluations(self) -> int:
        return len(self.raw_values)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "points": self.dataset.points.tolist(),
            "values": self.dataset.values.tolist(),
            "raw_values": [v if np.isfinite(v) else "-inf" for v in self.raw_values],
            "hyperparameters": hyp_to_dict(self.hyp),
            "mu_max": self.mu_max,
            "map_point": self.map_point.tolist(),
            "trace": self.trace,
            "refit_interval": self.refit_interval,
            "design_size": self.design_size,
        }


def hyp_to_dict(hyp: GpHyperparameters) -> dict:
    return {
        "bias_variance": hyp.bias_variance,
        "matern_variance": hyp.matern_variance,
        "length_scales": list(hyp.length_scales),
        "noise_variance": hyp.noise_variance,
    }


def hyp_from_dict(d: dict) -> GpHyperparameters:
    return GpHyperparameters(
        bias_variance=d["bias_variance"],
        matern_variance=d["matern_variance"],
        length_scales=tuple(d["length_scales"]),
        noise_variance=d["noise_variance"],
    )


def state_from_dict(d: dict) -> GpoRunState:
    dataset = SurrogateDataset(np.asarray(d["points"]), np.asarray(d["values"]))
    hyp = hyp_from_dict(d["hyperparameters"])
    model = GpModel(dataset, hyp).fit()
    raw = [(-np.inf if v == "-inf" else float(v)) for v in d["raw_values"]]
    return GpoRunState(
        iteration=d["iteration"], dataset=dataset, hyp=hyp, model=model,
        mu_max=d["mu_max"], map_point=np.asarray(d["map_point"]),
        raw_values=raw, trace=list(d["trace"]),
        refit_interval=d["refit_interval"], design_size=d["design_size"],
    )


def _hyp_hash(hyp: GpHyperparameters) -> str:
    payload = repr(tuple(round(v, 12) for v in hyp.log_vector()))
    return hashlib.sha1(payload.encode()).hexdigest()[:12]


def _surrogate_max_over_samples(model: GpModel):
    mean, _, _ = model.predict(model.dataset.points)
    best = int(np.argmax(mean))
    return float(mean[best]), model.dataset.points[best].copy()


def _acquire(model: GpModel, mu_max: float, box: SearchBox, cfg: AcquisitionConfig):
    """Maximise EI over the box; returns (argmax, max EI, evaluations)."""

    def objective(X):
        mean, var, _ = model.predict(X)
        return _ei(mean, np.sqrt(var), mu_max, cfg.zeta)

    point, value, n = direct_optimize(objective, box, cfg.direct_budget, vectorized=True)
    return point, float(value), n


def propose_next(state: GpoRunState, box: SearchBox, cfg: AcquisitionConfig,
                 rng: np.random.Generator) -> np.ndarray:
    """EI argmax plus Gaussian jitter, clamped back into the box."""
    point, _, _ = _acquire(state.model, state.mu_max, box, cfg)
    jitter = rng.standard_normal(box.dim) * cfg.jitter_std(box.dim)
    return box.clamp(point + jitter)


def _refloor_dataset(points, raw_values):
    """Recompute floored values when a new raw value changes the floor."""
    return SurrogateDataset(points, floor_values(np.asarray(raw_values, dtype=float)))


def gpo_run(evaluator, box: SearchBox, L: int, K: int,
            cfg: AcquisitionConfig = None, refit_interval: int = 25,
            stream: RngStream = None, trace_path=None, eb_restarts: int = 3,
            init_hyp: GpHyperparameters = None):
    """Design, fit, acquire loop; returns (GpoRunState, GpModel).

    ``evaluator(values) -> LogPosteriorEstimate`` supplies the noisy
    objective; L design points come from a Latin hypercube, then K
    acquisition iterations with hyperparameter refits every
    ``refit_interval`` iterations. -inf evaluations are floored before
    entering the surrogate dataset but kept raw in the state.
    """
    from .optim import latin_hypercube

    if L < 2:
        raise NumericalError(f"need at least 2 design points, got L={L}")
    if K < 0:
        raise NumericalError(f"iteration count must be >= 0, got K={K}")
    if cfg is None:
        cfg = default_acquisition_config(box.dim)
    if stream is None:
        stream = RngStream(0)

    design = latin_hypercube(L, box, stream.child(_KEY_DESIGN).generator())
    raw_values = [float(evaluator(pt).xi) for pt in design]
    dataset = _refloor_dataset(design, raw_values)

    eb_rng = stream.child(_KEY_EB).generator()
    if init_hyp is None:
        init_hyp = default_hyperparameters(dataset, box)
    hyp = estimate_hyperparameters(dataset, init_hyp, eb_restarts, box=box, rng=eb_rng)
    model = GpModel(dataset, hyp).fit()
    mu_max, map_point = _surrogate_max_over_samples(model)

    state = GpoRunState(
        iteration=0, dataset=dataset, hyp=hyp, model=model, mu_max=mu_max,
        map_point=map_point, raw_values=raw_values, trace=[],
        refit_interval=refit_interval, design_size=L,
    )

    for k in range(1, K + 1):
        argmax_ei, ei_max, _ = _acquire(model, mu_max, box, cfg)
        if cfg.ei_threshold is not None and ei_max < cfg.ei_threshold:
            break
        jitter_rng = stream.child(_KEY_JITTER, k).generator()
        proposal = box.clamp(
            argmax_ei + jitter_rng.standard_normal(box.dim) * cfg.jitter_std(box.dim))

        est = evaluator(proposal)
        xi = float(est.xi)
        raw_values.append(xi)
        if math.isfinite(xi):
            dataset = dataset.with_point(proposal, xi)
        else:
            dataset = dataset.with_point(proposal, floor_value(raw_values))

        if k % refit_interval == 0:
            hyp = estimate_hyperparameters(dataset, hyp, eb_restarts, box=box, rng=eb_rng)
        model = GpModel(dataset, hyp).fit()
        mu_max, map_point = _surrogate_max_over_samples(model)

        record = {
            "k": k,
            "theta": [float(v) for v in proposal],
            "xi": xi if math.isfinite(xi) else "-inf",
            "ei": ei_max,
            "hyp_hash": _hyp_hash(hyp),
            "mu_max": mu_max,
            "map_point": [float(v) for v in map_point],
        }
        state.trace.append(record)
        if trace_path is not None:
            with open(trace_path, "a") as fh:
                fh.write(json.dumps(record) + "\n")

        state.iteration = k
        state.dataset = dataset
        state.hyp = hyp
        state.model = model
        state.mu_max = mu_max
        state.map_point = map_point

    return state, model


@dataclass
class LaplacePosterior:
    """Gaussian approximation at the surrogate MAP.

    ``hessian`` is the (repaired) negative curvature matrix J and
    ``covariance`` its inverse; ``boundary`` marks a MAP pinned to the
    search box where the quadratic expansion is suspect.
    """

    theta_map: np.ndarray
    names: tuple
    map_value: float
    hessian: np.ndarray
    covariance: np.ndarray
    marginal_std: np.ndarray
    boundary: bool
    repaired: bool
    raw_hessian: np.ndarray

    def as_theta(self, model_id: str) -> ThetaVector:
        return ThetaVector(model_id, tuple(self.theta_map))


def _coordinate_polish(f, x, box: SearchBox, rel_start=1e-2, rel_stop=1e-6):
    """Axis-aligned pattern search shrinking from rel_start to rel_stop of
    the box width; deterministic, stays inside the box."""
    widths = box.widths()
    step = widths * rel_start
    floor = widths * rel_stop
    fx = float(f(x))
    while True:
        moved = False
        for d in range(box.dim):
            for sign in (1.0, -1.0):
                cand = x.copy()
                cand[d] = min(max(cand[d] + sign * step[d], box.lower[d]), box.upper[d])
                if cand[d] == x[d]:
                    continue
                fc = float(f(cand))
                if fc > fx:
                    x, fx = cand, fc
                    moved = True
        if not moved:
            if np.all(step <= floor):
                break
            step = np.maximum(step / 4.0, floor * 0.999999)
    return x, fx


def extract_laplace(model: GpModel, box: SearchBox, hessian_steps=None,
                    direct_budget: DirectBudget = None) -> LaplacePosterior:
    """MAP of the surrogate mean over the box plus a curvature-based
    Gaussian: J = -(Hessian of the mean), covariance = J^{-1}.

    Near-singular J is repaired by clamping eigenvalues below
    1e-8 * (largest eigenvalue); a J with no positive curvature at all is
    an error carrying the raw matrix.
    """
    if direct_budget is None:
        direct_budget = DirectBudget(2000)
    widths = box.widths()
    if hessian_steps is None:
        hessian_steps = 1e-4 * widths

    def mean_batch(X):
        return model.predict(X)[0]

    def mean_scalar(x):
        m, _, _ = model.predict(np.asarray(x, dtype=float))
        return m

    start, _, _ = direct_optimize(mean_batch, box, direct_budget, vectorized=True)
    x_map, f_map = _coordinate_polish(mean_scalar, start, box)

    lo, hi = box.lower_array(), box.upper_array()
    tol = 1e-8 * widths
    boundary = bool(np.any(x_map <= lo + tol) or np.any(x_map >= hi - tol))

    # keep the stencil interior; at a boundary MAP the curvature is taken
    # just inside, which the boundary flag already marks as suspect
    x_stencil = np.clip(x_map, lo + 2.0 * hessian_steps, hi - 2.0 * hessian_steps)
    raw = -finite_difference_hessian(mean_scalar, x_stencil, hessian_steps, box=box)
    raw = 0.5 * (raw + raw.T)

    eigval, eigvec = np.linalg.eigh(raw)
    max_eig = float(eigval.max())
    if max_eig <= 0.0:
        err = NumericalError("no positive curvature at the surrogate maximum")
        err.matrix = raw
        raise err
    floor_eig = 1e-8 * max_eig
    clamped = np.maximum(eigval, floor_eig)
    repaired = bool(np.any(eigval < floor_eig))
    J = eigvec @ np.diag(clamped) @ eigvec.T
    J = 0.5 * (J + J.T)
    cov = eigvec @ np.diag(1.0 / clamped) @ eigvec.T
    cov = 0.5 * (cov + cov.T)

    return LaplacePosterior(
        theta_map=x_map,
        names=tuple(box.names),
        map_value=float(f_map),
        hessian=J,
        covariance=cov,
        marginal_std=np.sqrt(np.diag(cov)),
        boundary=boundary,
        repaired=repaired,
        raw_hessian=raw,
    )
