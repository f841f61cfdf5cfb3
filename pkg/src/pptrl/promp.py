"""Probabilistic movement primitives over normalized RBF bases.

Weights are vectorized dimension-major: the ``K`` weights of dimension 0
come first, then dimension 1, and so on. A trajectory point at phase ``phi``
is ``y_i(phi) = b(phi) . w[i*K:(i+1)*K]`` where ``b`` is the basis vector.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg

from .errors import ConditioningError, IllPosedFitError, InvalidInputError

DEFAULT_WIDTH_FACTOR = 0.7
DEFAULT_RIDGE = 1e-6
DEFAULT_VIA_NOISE = 1e-6
JITTER_SCALE = 1e-9
_MAX_JITTER_TRIES = 8


@dataclass(frozen=True)
class BasisConfig:
    K: int
    d: int
    centers: np.ndarray
    widths: np.ndarray
    normalize: bool = True

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=float).reshape(-1)
        widths = np.asarray(self.widths, dtype=float).reshape(-1)
        if self.K < 2 or self.d < 1:
            raise InvalidInputError(f"need K >= 2 and d >= 1, got K={self.K}, d={self.d}")
        if centers.shape != (self.K,) or widths.shape != (self.K,):
            raise InvalidInputError("centers and widths must have length K")
        if np.any(np.diff(centers) <= 0) or centers[0] < 0 or centers[-1] > 1:
            raise InvalidInputError("centers must be strictly increasing inside [0, 1]")
        if np.any(~(widths > 0)):
            raise InvalidInputError("widths must be positive")
        centers.setflags(write=False)
        widths.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "widths", widths)

    @classmethod
    def uniform(cls, K: int, d: int, width_factor: float = DEFAULT_WIDTH_FACTOR,
                normalize: bool = True) -> "BasisConfig":
        """Centers evenly spaced on [0, 1] (endpoints included), width = factor * spacing."""
        centers = np.linspace(0.0, 1.0, K)
        widths = np.full(K, width_factor / (K - 1))
        return cls(K=K, d=d, centers=centers, widths=widths, normalize=normalize)

    @property
    def n_weights(self) -> int:
        return self.K * self.d

    def to_dict(self) -> dict:
        return {"K": self.K, "d": self.d, "centers": self.centers.tolist(),
                "widths": self.widths.tolist(), "normalize": self.normalize}

    @classmethod
    def from_dict(cls, data: dict) -> "BasisConfig":
        return cls(K=int(data["K"]), d=int(data["d"]), centers=np.asarray(data["centers"]),
                   widths=np.asarray(data["widths"]), normalize=bool(data.get("normalize", True)))


def _check_symmetric_psd(cov: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(cov)):
        raise InvalidInputError(f"{name} has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(cov)))) if cov.size else 1.0
    if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-10 * scale:
        raise InvalidInputError(f"{name} is not symmetric")
    if cov.size and np.linalg.eigvalsh(cov)[0] < -1e-10 * scale:
        raise InvalidInputError(f"{name} is not positive semi-definite")


@dataclass(frozen=True)
class WeightDistribution:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise InvalidInputError(f"covariance shape {cov.shape} does not match mean length {n}")
        if not np.all(np.isfinite(mean)):
            raise InvalidInputError("mean has non-finite entries")
        _check_symmetric_psd(cov, "weight covariance")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    def to_dict(self, config: BasisConfig) -> dict:
        return {**config.to_dict(), "mean": self.mean.tolist(),
                "cov_row_major": self.cov.reshape(-1).tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> tuple["WeightDistribution", BasisConfig]:
        config = BasisConfig.from_dict(data)
        n = config.n_weights
        dist = cls(mean=np.asarray(data["mean"]), cov=np.asarray(data["cov_row_major"]).reshape(n, n))
        return dist, config

    def to_json(self, config: BasisConfig) -> str:
        return json.dumps(self.to_dict(config), indent=2)

    @classmethod
    def from_json(cls, text: str) -> tuple["WeightDistribution", BasisConfig]:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ViaPoint:
    phase: float
    target: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class ViaPointSet:
    entries: tuple[ViaPoint, ...] = ()

    @classmethod
    def from_points(cls, phases: Iterable[float], targets: Iterable[Sequence[float]],
                    covs: Iterable[np.ndarray] | None = None,
                    noise: float = DEFAULT_VIA_NOISE) -> "ViaPointSet":
        phases = list(phases)
        targets = [np.asarray(t, dtype=float).reshape(-1) for t in targets]
        if len(phases) != len(targets):
            raise InvalidInputError("phases and targets differ in length")
        if covs is None:
            covs = [noise * np.eye(t.shape[0]) for t in targets]
        entries = []
        for phase, target, cov in zip(phases, targets, covs):
            cov = np.asarray(cov, dtype=float)
            if not 0.0 <= phase <= 1.0:
                raise InvalidInputError(f"via-point phase {phase} outside [0, 1]")
            if cov.shape != (target.shape[0],) * 2:
                raise InvalidInputError("via-point covariance shape mismatch")
            cov = 0.5 * (cov + cov.T)
            if np.linalg.eigvalsh(cov)[0] <= 0:
                raise InvalidInputError("via-point covariance must be positive definite")
            entries.append(ViaPoint(float(phase), target, cov))
        return cls(tuple(entries))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass(frozen=True)
class Trajectory:
    phases: np.ndarray
    points: np.ndarray
    covs: np.ndarray | None = field(default=None)

    def __post_init__(self):
        phases = np.asarray(self.phases, dtype=float).reshape(-1)
        points = np.asarray(self.points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        if points.shape[0] != phases.shape[0]:
            raise InvalidInputError("points count must equal phases count")
        if phases.size < 2 or np.any(np.diff(phases) <= 0):
            raise InvalidInputError("phases must be strictly increasing")
        if abs(phases[0]) > 1e-12 or abs(phases[-1] - 1.0) > 1e-12:
            raise InvalidInputError("phases must start at 0 and end at 1")
        object.__setattr__(self, "phases", phases)
        object.__setattr__(self, "points", points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["phase"] + [f"dim{i}" for i in range(self.dim)])
        for phase, point in zip(self.phases, self.points):
            writer.writerow([repr(float(phase))] + [repr(float(v)) for v in point])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        data = np.array([[float(v) for v in row] for row in rows[1:]])
        return cls(phases=data[:, 0], points=data[:, 1:])

    def to_dict(self) -> dict:
        out = {"phases": self.phases.tolist(), "points": self.points.tolist()}
        if self.covs is not None:
            out["covs"] = np.asarray(self.covs).tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Trajectory":
        covs = np.asarray(data["covs"]) if "covs" in data else None
        return cls(phases=np.asarray(data["phases"]), points=np.asarray(data["points"]), covs=covs)


def _check_phase(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(phi)):
        raise InvalidInputError("phase must be finite")
    if np.any(phi < -1e-12) or np.any(phi > 1 + 1e-12):
        raise InvalidInputError("phase must lie in [0, 1]")
    return phi


def basis_matrix(config: BasisConfig, phases) -> np.ndarray:
    """Basis activations for many phases, shape ``(n, K)``."""
    phi = _check_phase(phases).reshape(-1, 1)
    act = np.exp(-0.5 * ((phi - config.centers) / config.widths) ** 2)
    if config.normalize:
        act = act / act.sum(axis=1, keepdims=True)
    return act


def basis_vector(config: BasisConfig, phi: float) -> np.ndarray:
    """Gaussian RBF activations at a single phase, normalized to sum 1 if configured."""
    return basis_matrix(config, phi)[0]


def _check_weights(config: BasisConfig, weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape[-1] != config.n_weights:
        raise InvalidInputError(f"expected {config.n_weights} weights, got {w.shape[-1]}")
    return w


def decode(config: BasisConfig, weights, phi):
    """Trajectory point(s) ``y(phi)`` for a weight vector.

    A scalar phase returns a ``d``-vector, an array of phases returns ``(n, d)``.
    A leading batch axis on ``weights`` is carried through.
    """
    w = _check_weights(config, weights)
    scalar = np.ndim(phi) == 0
    B = basis_matrix(config, phi)
    W = w.reshape(w.shape[:-1] + (config.d, config.K))
    out = np.einsum("nk,...dk->...nd", B, W)
    return out[..., 0, :] if scalar else out


def observation_matrix(config: BasisConfig, phases) -> np.ndarray:
    """Stacked block-diagonal basis rows, shape ``(len(phases) * d, K * d)``."""
    B = basis_matrix(config, phases)
    return np.vstack([np.kron(np.eye(config.d), row[None, :]) for row in B])


def decode_distribution(config: BasisConfig, dist: WeightDistribution, phi: float):
    """Mean and covariance of the trajectory point at ``phi``."""
    _check_weights(config, dist.mean)
    Psi = observation_matrix(config, [phi])
    mean = Psi @ dist.mean
    cov = Psi @ dist.cov @ Psi.T
    return mean, 0.5 * (cov + cov.T)


def fit_weights(config: BasisConfig, demo: Trajectory, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    if demo.dim != config.d:
        raise InvalidInputError(f"demo has {demo.dim} dims, basis expects {config.d}")
    if demo.phases.size < config.K:
        raise IllPosedFitError(f"demo has {demo.phases.size} samples, need at least K={config.K}")
    B = basis_matrix(config, demo.phases)
    A = np.vstack([B, np.sqrt(ridge) * np.eye(config.K)]) if ridge > 0 else B
    rhs = np.vstack([demo.points, np.zeros((config.K, config.d))]) if ridge > 0 else demo.points
    W, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return W.T.reshape(-1)


def fit_prior(config: BasisConfig, demos: Sequence[Trajectory],
              ridge: float = DEFAULT_RIDGE) -> WeightDistribution:
    """Gaussian over per-demonstration ridge least-squares weights.

    ``ridge * I`` is added to the sample covariance whenever it is rank
    deficient (always the case for a single demonstration).
    """
    if len(demos) == 0:
        raise IllPosedFitError("need at least one demonstration")
    W = np.array([fit_weights(config, demo, ridge) for demo in demos])
    mean = W.mean(axis=0)
    n = config.n_weights
    cov = np.cov(W, rowvar=False, ddof=1).reshape(n, n) if len(demos) > 1 else np.zeros((n, n))
    cov = 0.5 * (cov + cov.T)
    if len(demos) < 2 or np.linalg.matrix_rank(cov) < n:
        cov = cov + ridge * np.eye(n)
    return WeightDistribution(mean=mean, cov=cov)


def _factor_spd(S: np.ndarray):
    """Cholesky factor of an SPD matrix, adding escalating jitter on failure."""
    n = S.shape[0]
    base = JITTER_SCALE * max(np.trace(S) / n, np.finfo(float).tiny)
    jitter = 0.0
    for attempt in range(_MAX_JITTER_TRIES):
        try:
            return linalg.cho_factor(S + jitter * np.eye(n), lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError):
            jitter = base * 10.0 ** attempt
    raise ConditioningError("matrix is not positive definite even after jitter")


def _gain(cov: np.ndarray, config: BasisConfig, vias: ViaPointSet):
    for via in vias:
        if via.target.shape != (config.d,):
            raise InvalidInputError("via-point target dimension does not match basis")
    H = observation_matrix(config, [v.phase for v in vias])
    R = linalg.block_diag(*[v.cov for v in vias])
    SigmaHt = cov @ H.T
    S = H @ SigmaHt + R
    S = 0.5 * (S + S.T)
    factor = _factor_spd(S)
    return H, SigmaHt, linalg.cho_solve(factor, SigmaHt.T)  # S^-1 H Sigma


def condition(dist: WeightDistribution, config: BasisConfig, vias: ViaPointSet) -> WeightDistribution:
    """Gaussian posterior over weights given noisy via-point observations.

    Evaluated in innovation form, ``Sigma_post = Sigma - G H Sigma`` with gain
    ``G = Sigma H^T S^-1`` and ``S = H Sigma H^T + Sigma_D``; this equals the
    information-form posterior but only factorizes the small innovation matrix.
    """
    if len(vias) == 0:
        return dist
    _check_weights(config, dist.mean)
    H, SigmaHt, gain_t = _gain(dist.cov, config, vias)
    y = np.concatenate([v.target for v in vias])
    mean = dist.mean + gain_t.T @ (y - H @ dist.mean)
    cov = dist.cov - SigmaHt @ gain_t
    cov = 0.5 * (cov + cov.T)
    # clip round-off negativity so the PSD invariant holds
    evals, evecs = np.linalg.eigh(cov)
    if evals[0] < 0:
        cov = (evecs * np.maximum(evals, 0.0)) @ evecs.T
        cov = 0.5 * (cov + cov.T)
    return WeightDistribution(mean=mean, cov=cov)


def residual_projector(config: BasisConfig, cov: np.ndarray, vias: ViaPointSet) -> np.ndarray:
    """Matrix ``I - G H`` mapping a prior-mean shift to the posterior-mean shift.

    Conditioning is affine in the prior mean, so a residual ``delta`` added
    before conditioning moves the posterior mean by ``P @ delta``; the via-points
    stay satisfied up to their noise.
    """
    n = config.n_weights
    if len(vias) == 0:
        return np.eye(n)
    H, _, gain_t = _gain(np.asarray(cov, dtype=float), config, vias)
    return np.eye(n) - gain_t.T @ H


def sample_weights(dist: WeightDistribution, seed) -> np.ndarray:
    """Draw ``w ~ N(mean, cov)`` through a symmetric eigen-factorization."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    try:
        evals, evecs = np.linalg.eigh(dist.cov)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("covariance eigendecomposition failed") from exc
    scale = max(1.0, float(np.max(np.abs(evals), initial=0.0)))
    if evals.size and evals[0] < -1e-10 * scale:
        raise ConditioningError("covariance has negative eigenvalues")
    root = evecs * np.sqrt(np.clip(evals, 0.0, None))
    z = rng.standard_normal(dist.mean.shape[0])
    return dist.mean + root @ z


def trajectory_from_weights(config: BasisConfig, weights, n_points: int = 101,
                            dist: WeightDistribution | None = None) -> Trajectory:
    phases = np.linspace(0.0, 1.0, n_points)
    points = decode(config, weights, phases)
    covs = None
    if dist is not None:
        covs = np.array([decode_distribution(config, dist, p)[1] for p in phases])
    return Trajectory(phases=phases, points=points, covs=covs)
