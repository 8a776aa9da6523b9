"""
Lag-l multivariate autoregressive latent dynamics.

    y(t + dt) = C r(t),    r(t) = [y(t); y(t - dt); ...; y(t - (l-1) dt)]

One shared model is fit by ordinary least squares over the rows of every
training trajectory; the lag is chosen by BIC with T_c = l d^2 coefficients.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from .dataset import read_artifact, write_artifact
from .enums import ArtifactMode
from .exceptions import DomainError, InstabilityError, RegularizationError

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e6
COVARIANCE_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class LatentTrajectorySet:
    """Uniformly sampled latent trajectories, one (T, d) array per run"""
    trajectories: List[Tuple[int, np.ndarray]] = field(repr=False)
    dt: float

    def __post_init__(self):
        if not self.trajectories:
            raise DomainError("A trajectory set needs at least one trajectory")
        dims = {np.asarray(states).shape[1] for _, states in self.trajectories}
        if len(dims) != 1:
            raise DomainError(f"Trajectories disagree on the latent dimension: {sorted(dims)}")
        cleaned = [
            (int(run_id), np.asarray(states, dtype=np.float64))
            for run_id, states in self.trajectories
        ]
        object.__setattr__(self, "trajectories", cleaned)

    @property
    def d(self) -> int:
        return self.trajectories[0][1].shape[1]

    @property
    def min_length(self) -> int:
        return min(states.shape[0] for _, states in self.trajectories)

    @property
    def latent_radius(self) -> float:
        """Largest state norm seen in training"""
        return max(float(np.linalg.norm(states, axis=1).max()) for _, states in self.trajectories)


@dataclass(frozen=True)
class OlsFit:
    coefficients: np.ndarray  # C, (d, d*l)
    residual_covariance: np.ndarray  # (d, d)
    n_samples: int
    condition_number: float
    residual_sum_of_squares: float


@dataclass(frozen=True, eq=False)
class MvarModel:
    """Fitted lag-l model; column block k of C multiplies y(t - k dt)"""
    lag: int
    coefficients: np.ndarray = field(repr=False)
    residual_covariance: Optional[np.ndarray] = field(default=None, repr=False)
    n_samples: int = 0
    bic_table: Dict[int, float] = field(default_factory=dict)
    kind: str = ""
    latent_radius: float = 1.0
    dt: float = 1.0
    condition_number: float = float("nan")

    @property
    def d(self) -> int:
        return self.coefficients.shape[0]

    @property
    def n_coefficients(self) -> int:
        return self.lag * self.d ** 2

    def coefficient_blocks(self) -> List[np.ndarray]:
        d = self.d
        return [self.coefficients[:, k * d:(k + 1) * d] for k in range(self.lag)]

    def companion_matrix(self) -> np.ndarray:
        d, lag = self.d, self.lag
        companion = np.zeros((d * lag, d * lag))
        companion[:d, :] = self.coefficients
        if lag > 1:
            companion[d:, :-d] = np.eye(d * (lag - 1))
        return companion

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(linalg.eigvals(self.companion_matrix()))))


def build_regressors(trajset: LatentTrajectorySet, lag: int) -> Tuple[np.ndarray, np.ndarray]:
    """Stack (r(t), y(t + dt)) rows of every trajectory, newest state first.

    A trajectory of T states contributes T - lag rows; rows never mix runs.
    """
    if lag < 1:
        raise DomainError(f"Lag must be at least 1, got {lag}")
    rows, targets = [], []
    for run_id, states in trajset.trajectories:
        n_states = states.shape[0]
        if n_states < lag + 1:
            raise DomainError(
                f"Trajectory {run_id} has {n_states} states; lag {lag} needs at least {lag + 1}"
            )
        rows.append(np.hstack([states[lag - 1 - k:n_states - 1 - k] for k in range(lag)]))
        targets.append(states[lag:])
    return np.vstack(rows), np.vstack(targets)


def _floored_covariance(residuals: np.ndarray, targets: np.ndarray) -> np.ndarray:
    n_samples, d = targets.shape
    covariance = residuals.T @ residuals / n_samples
    covariance = 0.5 * (covariance + covariance.T)
    scale = float(np.trace(targets.T @ targets)) / (n_samples * d)
    floor = max(COVARIANCE_FLOOR * scale, np.finfo(np.float64).tiny)
    values, vectors = linalg.eigh(covariance)
    values = np.maximum(values, floor)
    return (vectors * values) @ vectors.T


def fit_ols(R: np.ndarray, Y_next: np.ndarray) -> OlsFit:
    """C^T = argmin ||R C^T - Y_next||_F via a least-squares factorization"""
    R = np.asarray(R, dtype=np.float64)
    Y_next = np.asarray(Y_next, dtype=np.float64)
    n_samples, n_regressors = R.shape
    rank = np.linalg.matrix_rank(R)
    if rank < n_regressors:
        raise RegularizationError(
            f"Regressor matrix has rank {rank} < {n_regressors}; "
            f"reduce the lag or add training trajectories"
        )
    singular = linalg.svdvals(R)
    condition = float(singular[0] / singular[-1]) ** 2
    coefficients_t, _, _, _ = linalg.lstsq(R, Y_next)
    residuals = Y_next - R @ coefficients_t
    logger.debug(f"OLS on {n_samples}x{n_regressors} regressors, cond(R^T R)={condition:.3e}")
    return OlsFit(
        coefficients=coefficients_t.T,
        residual_covariance=_floored_covariance(residuals, Y_next),
        n_samples=n_samples,
        condition_number=condition,
        residual_sum_of_squares=float(np.sum(residuals ** 2)),
    )


def gaussian_log_likelihood(residual_covariance: np.ndarray, n_samples: int) -> float:
    """-(N/2) (d log 2 pi + log det Sigma + d)"""
    d = residual_covariance.shape[0]
    sign, logdet = np.linalg.slogdet(residual_covariance)
    if sign <= 0:
        return -np.inf
    return -0.5 * n_samples * (d * np.log(2.0 * np.pi) + logdet + d)


def bic(log_likelihood: float, n_samples: int, lag: int, d: int) -> float:
    return -2.0 * log_likelihood + np.log(n_samples) * lag * d ** 2


def select_lag(
    trajset: LatentTrajectorySet, candidate_lags: Iterable[int]
) -> Tuple[int, Dict[int, float]]:
    """Minimize BIC over the candidates; ties go to the smaller lag.

    Rank-deficient candidates score +inf and are skipped with a warning.
    """
    candidates = sorted(set(int(lag) for lag in candidate_lags))
    if not candidates:
        raise DomainError("No candidate lags given")
    if trajset.min_length < candidates[-1] + 1:
        raise DomainError(
            f"Shortest trajectory ({trajset.min_length} states) cannot support lag {candidates[-1]}"
        )

    table: Dict[int, float] = {}
    failures: List[RegularizationError] = []
    for lag in candidates:
        R, Y_next = build_regressors(trajset, lag)
        try:
            fit = fit_ols(R, Y_next)
        except RegularizationError as e:
            logger.warning(f"Skipping lag {lag}: {e}")
            table[lag] = float("inf")
            failures.append(e)
            continue
        log_l = gaussian_log_likelihood(fit.residual_covariance, fit.n_samples)
        table[lag] = float(bic(log_l, fit.n_samples, lag, trajset.d))

    if len(failures) == len(candidates):
        raise failures[0]
    best = candidates[0]
    for lag in candidates[1:]:
        if table[lag] < table[best]:
            best = lag
    logger.info(f"BIC selected lag {best} from {candidates}")
    return best, table


def fit_mvar(
    trajset: LatentTrajectorySet,
    lag: Optional[int] = None,
    candidate_lags: Optional[Sequence[int]] = None,
    kind: str = "",
) -> MvarModel:
    """Fit with a fixed lag, or select one by BIC from ``candidate_lags``"""
    if lag is None:
        if not candidate_lags:
            raise DomainError("Give either a fixed lag or candidate lags")
        lag, table = select_lag(trajset, candidate_lags)
    else:
        table = {}
    R, Y_next = build_regressors(trajset, lag)
    fit = fit_ols(R, Y_next)
    model = MvarModel(
        lag=lag,
        coefficients=fit.coefficients,
        residual_covariance=fit.residual_covariance,
        n_samples=fit.n_samples,
        bic_table=table,
        kind=kind,
        latent_radius=trajset.latent_radius,
        dt=trajset.dt,
        condition_number=fit.condition_number,
    )
    logger.info(
        f"MVAR {kind or 'model'}: d={model.d}, l={lag}, {model.n_coefficients} coefficients, "
        f"companion radius {model.spectral_radius():.4f}"
    )
    return model


def forecast(model: MvarModel, warmup: np.ndarray, steps: int) -> np.ndarray:
    """Free-running rollout from ``lag`` warmup states (newest last).

    Returns the ``steps`` predicted states; raises InstabilityError when a
    state norm exceeds 1e6 times the training latent radius.
    """
    warmup = np.asarray(warmup, dtype=np.float64)
    if warmup.ndim == 1:
        warmup = warmup[:, None]
    if warmup.shape != (model.lag, model.d):
        raise DomainError(f"Warmup shape {warmup.shape} != ({model.lag}, {model.d})")

    limit = DIVERGENCE_FACTOR * max(model.latent_radius, np.finfo(np.float64).tiny)
    history = np.empty((model.lag + steps, model.d))
    history[:model.lag] = warmup
    for step in range(steps):
        regressor = history[step:step + model.lag][::-1].reshape(-1)
        state = model.coefficients @ regressor
        norm = float(np.linalg.norm(state))
        if not np.isfinite(norm) or norm > limit:
            raise InstabilityError(
                f"Forecast diverged at step {step} (|y| = {norm:.3e} > {limit:.3e})", step
            )
        history[model.lag + step] = state
    return history[model.lag:].copy()


def long_horizon_norm_ratio(model: MvarModel, warmup: np.ndarray, steps: int) -> float:
    """max |y| / training radius over a long rollout; inf when it diverges"""
    try:
        states = forecast(model, warmup, steps)
    except InstabilityError:
        return float("inf")
    radius = max(model.latent_radius, np.finfo(np.float64).tiny)
    return float(np.linalg.norm(states, axis=1).max() / radius) if steps else 0.0


def save_model(model: MvarModel, path: Union[str, Path], metadata=None) -> Path:
    lags = sorted(model.bic_table)
    meta = {
        "lag": model.lag,
        "d": model.d,
        "kind": model.kind,
        "n_samples": model.n_samples,
        "latent_radius": model.latent_radius,
        "dt": model.dt,
        "condition_number": model.condition_number,
    }
    meta.update(metadata or {})
    aux = {
        "residual_covariance": model.residual_covariance,
        "bic_lags": np.asarray(lags, dtype=np.int64),
        "bic_values": np.asarray([model.bic_table[lag] for lag in lags], dtype=np.float64),
    }
    return write_artifact(path, ArtifactMode.MODE_MVAR, model.coefficients, aux, meta)


def load_model(path: Union[str, Path]) -> MvarModel:
    content = read_artifact(path, ArtifactMode.MODE_MVAR)
    meta = content.metadata
    table = {
        int(lag): float(value)
        for lag, value in zip(content.aux["bic_lags"], content.aux["bic_values"])
    }
    return MvarModel(
        lag=int(meta["lag"]),
        coefficients=content.primary,
        residual_covariance=content.aux["residual_covariance"],
        n_samples=int(meta["n_samples"]),
        bic_table=table,
        kind=meta.get("kind", ""),
        latent_radius=float(meta["latent_radius"]),
        dt=float(meta["dt"]),
        condition_number=float(meta["condition_number"]),
    )
