"""Target dynamics, Gaussian-mixture noise and ground-truth trajectories."""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError


@dataclass(frozen=True)
class GaussianMixture:
    """Scalar mixture given as ``(weight, mean, variance)`` triples."""

    components: tuple

    def __post_init__(self):
        comps = tuple((float(w), float(m), float(v)) for w, m, v in self.components)
        if not comps:
            raise InvalidParameterError("mixture needs at least one component")
        weights = np.array([c[0] for c in comps])
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidParameterError(f"mixture weights must be >= 0 and sum to 1, got {weights.tolist()}")
        if any(c[2] < 0 for c in comps):
            raise InvalidParameterError("mixture variances must be non-negative")
        object.__setattr__(self, "components", comps)

    @classmethod
    def gaussian(cls, variance, mean=0.0):
        return cls(((1.0, mean, variance),))

    @property
    def weights(self):
        return np.array([c[0] for c in self.components])

    @property
    def means(self):
        return np.array([c[1] for c in self.components])

    @property
    def variances(self):
        return np.array([c[2] for c in self.components])

    @property
    def mean(self):
        return float(self.weights @ self.means)

    @property
    def variance(self):
        """Total variance by the law of total variance."""
        w, mu = self.weights, self.means
        return float(w @ (self.variances + mu**2) - (w @ mu) ** 2)

    def sample(self, rng, size=None):
        """Draw a component by weight, then a normal variate from it.

        Both draws happen for every sample, so the stream consumption is
        independent of which component was chosen.
        """
        shape = () if size is None else size
        u = rng.random(shape)
        z = rng.standard_normal(shape)
        idx = np.searchsorted(np.cumsum(self.weights)[:-1], u, side="right")
        out = self.means[idx] + np.sqrt(self.variances)[idx] * z
        return float(out) if size is None else out

    def to_json(self):
        return [list(c) for c in self.components]


def sample_mixture(mix, rng):
    return mix.sample(rng)


@dataclass(frozen=True)
class StateSpaceModel:
    """Linear time-invariant model shared by every node of the network.

    ``C`` holds one observation matrix per node; ``process_noise`` one mixture
    per state coordinate and ``measurement_noise`` one mixture per node (scalar
    mixtures applied independently to each of that node's measurement rows).
    ``Q`` and ``R`` are the moment-matched covariances the filter uses.
    """

    A: np.ndarray
    C: tuple
    process_noise: tuple
    measurement_noise: tuple
    Q: np.ndarray = field(default=None)
    R: tuple = field(default=None)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n):
            raise InvalidParameterError(f"A must be square, got {A.shape}")
        C = tuple(np.atleast_2d(np.asarray(c, dtype=float)) for c in self.C)
        for i, c in enumerate(C):
            if c.shape[1] != n:
                raise InvalidParameterError(f"C[{i}] has {c.shape[1]} columns, expected {n}")
            if np.linalg.matrix_rank(c) != c.shape[0]:
                raise InvalidParameterError(f"C[{i}] must have full row rank")
        if len(self.process_noise) != n:
            raise InvalidParameterError(f"need {n} process-noise mixtures, got {len(self.process_noise)}")
        if len(self.measurement_noise) != len(C):
            raise InvalidParameterError("need one measurement-noise mixture per node")
        Q = self.Q
        if Q is None:
            Q = np.diag([mix.variance for mix in self.process_noise])
        R = self.R
        if R is None:
            R = tuple(mix.variance * np.eye(c.shape[0]) for mix, c in zip(self.measurement_noise, C))
        Q = np.asarray(Q, dtype=float)
        R = tuple(np.asarray(r, dtype=float) for r in R)
        _check_psd(Q, "Q")
        for i, (r, c) in enumerate(zip(R, C)):
            if r.shape != (c.shape[0], c.shape[0]):
                raise InvalidParameterError(f"R[{i}] has shape {r.shape}, expected {(c.shape[0],) * 2}")
            _check_psd(r, f"R[{i}]")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "process_noise", tuple(self.process_noise))
        object.__setattr__(self, "measurement_noise", tuple(self.measurement_noise))
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def node_count(self):
        return len(self.C)

    def m(self, i):
        return self.C[i].shape[0]


def _check_psd(m, name):
    if not np.allclose(m, m.T, atol=1e-12):
        raise InvalidParameterError(f"{name} must be symmetric")
    if m.size and np.linalg.eigvalsh(m)[0] < -1e-12:
        raise InvalidParameterError(f"{name} must be positive semi-definite")


IMPULSIVE_PROCESS_NOISE = GaussianMixture(((0.9, 0.0, 0.01), (0.1, 0.0, 1.0)))
IMPULSIVE_MEASUREMENT_NOISE = GaussianMixture(((0.9, 0.0, 0.01), (0.1, 0.0, 100.0)))


def tracking_matrix(dt):
    return np.array([[1.0, dt, dt * dt / 2.0], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])


def default_tracking_model(dt=0.1, node_count=20, process_noise=None, measurement_noise=None):
    """Constant-acceleration target observed through its velocity only."""
    if dt < 0:
        raise InvalidParameterError(f"dt must be non-negative, got {dt}")
    process_noise = process_noise or IMPULSIVE_PROCESS_NOISE
    measurement_noise = measurement_noise or IMPULSIVE_MEASUREMENT_NOISE
    if isinstance(process_noise, GaussianMixture):
        process_noise = (process_noise,) * 3
    if isinstance(measurement_noise, GaussianMixture):
        measurement_noise = (measurement_noise,) * node_count
    c = np.array([[0.0, 1.0, 0.0]])
    return StateSpaceModel(
        A=tracking_matrix(dt),
        C=(c,) * node_count,
        process_noise=tuple(process_noise),
        measurement_noise=tuple(measurement_noise),
    )


@dataclass
class Trajectory:
    """Truth states ``(steps, n)`` and per-node observations ``(steps, m_i)``.

    ``process`` keeps the sampled process noise so the recursion can be
    checked exactly.
    """

    x0: np.ndarray
    states: np.ndarray
    observations: list
    process: np.ndarray


def simulate_truth(model, x0, steps, rng, measurement_rng=None):
    """Run ``x_k = A x_{k-1} + q_k`` and ``y_k^i = C_i x_k + v_k^i``.

    Process noise is drawn from ``rng``; measurement noise from
    ``measurement_rng`` (defaults to ``rng``), one channel per node.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.n,):
        raise InvalidParameterError(f"x0 must have length {model.n}")
    if steps < 1:
        raise InvalidParameterError("steps must be >= 1")
    measurement_rng = rng if measurement_rng is None else measurement_rng
    q = np.column_stack([mix.sample(rng, steps) for mix in model.process_noise])
    states = np.empty((steps, model.n))
    x = x0
    for k in range(steps):
        x = model.A @ x + q[k]
        states[k] = x
    observations = []
    for i, c in enumerate(model.C):
        v = model.measurement_noise[i].sample(measurement_rng, (steps, c.shape[0]))
        observations.append(states @ c.T + v)
    return Trajectory(x0=x0, states=states, observations=observations, process=q)
