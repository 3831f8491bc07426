"""Monte-Carlo experiment harness: configuration, trials, MSD and outputs.

All nodes of all trials of one ``(algorithm, sigma, p)`` block advance in
lockstep through the batched filter. Each trial draws from its own random
streams derived from ``(seed, trial)``, split into process noise,
measurement noise, packet drops and initial-estimate channels. The streams
do not depend on ``sigma``, ``p`` or the algorithm, so every block of an
experiment sees the same noise and drop uniforms (common random numbers).
"""

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ConfigError
from .filters import FilterConfig, FilterState, build_augmented, dmckf_dpd_step, predict, stationary_dkf_step
from .model import GaussianMixture, default_tracking_model
from .network import (
    DropModel,
    DropRealization,
    NetworkStacker,
    default_topology,
    drop_uniforms,
    indicators_from_uniforms,
    read_edge_list,
    stack_neighborhood,
)
from .model import simulate_truth

ALGORITHMS = ("dmckf-dpd", "stationary-dkf")
CSV_HEADER = "trial,step,node,algorithm,sigma,p,sq_error,iterations"
DEFAULT_SWEEP_SIGMAS = (0.4, 0.6, 1.0, 4.0, 8.0)
DEFAULT_SWEEP_PROBS = (0.9, 0.8, 0.7)


def _schema():
    return json.loads(resources.files("dmckf.data").joinpath("config.schema.json").read_text(encoding="utf-8"))


@dataclass(frozen=True)
class ExperimentConfig:
    dt: float = 0.1
    process_noise: tuple = ((0.9, 0.0, 0.01), (0.1, 0.0, 1.0))
    measurement_noise: tuple = ((0.9, 0.0, 0.01), (0.1, 0.0, 100.0))
    x0: tuple = (0.0, 0.0, 1.0)
    init_variance: float = 0.01
    p0_scale: float = 0.01
    topology: str = "default"
    drop_probs: tuple = (0.8,)
    link_overrides: tuple = ()
    sigmas: tuple = (2.0,)
    epsilon: float = 1e-6
    max_iterations: int = 100
    kernel_floor: float = 1e-12
    weighted_joseph: bool = False
    trials: int = 20
    steps: int = 1000
    seed: int = 0
    algorithms: str = "both"
    records_csv: str = None
    summary_json: str = None
    figures_dir: str = None

    def __post_init__(self):
        if self.trials < 1 or self.steps < 1:
            raise ConfigError("trials and steps must be >= 1")
        if not self.sigmas or any(not s > 0 for s in self.sigmas):
            raise ConfigError("sigma values must be positive")
        if not self.drop_probs or any(not 0 < p <= 1 for p in self.drop_probs):
            raise ConfigError("drop probabilities must lie in (0, 1]")
        if self.algorithms not in ALGORITHMS + ("both",):
            raise ConfigError(f"unknown algorithm selection {self.algorithms!r}")

    @classmethod
    def from_dict(cls, data):
        """Build from the nested JSON layout, rejecting unknown keys."""
        try:
            jsonschema.validate(data, _schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"schema violation at {where}: {exc.message}") from None
        model = data.get("model", {})
        drops = data.get("drops", {})
        filt = data.get("filter", {})
        out = data.get("outputs", {})
        kw = {}
        for key in ("dt", "x0", "init_variance", "p0_scale", "process_noise", "measurement_noise"):
            if key in model:
                kw[key] = model[key]
        if "p" in drops:
            kw["drop_probs"] = drops["p"] if isinstance(drops["p"], list) else [drops["p"]]
        if "overrides" in drops:
            kw["link_overrides"] = drops["overrides"]
        for key in ("sigmas", "epsilon", "max_iterations", "kernel_floor", "weighted_joseph"):
            if key in filt:
                kw[key] = filt[key]
        for key in ("topology", "trials", "steps", "seed", "algorithms"):
            if key in data:
                kw[key] = data[key]
        for key in ("records_csv", "summary_json", "figures_dir"):
            if key in out:
                kw[key] = out[key]
        for key, value in list(kw.items()):
            if isinstance(value, list):
                kw[key] = _tupled(value)
        return cls(**kw)

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc.msg} at line {exc.lineno}") from None
        cfg = cls.from_dict(data)
        if cfg.topology != "default" and not Path(cfg.topology).is_absolute():
            cfg = cfg.replace(topology=str(path.parent / cfg.topology))
        return cfg

    def to_dict(self):
        d = asdict(self)
        return {
            "model": {k: _listed(d[k]) for k in ("dt", "process_noise", "measurement_noise", "x0", "init_variance", "p0_scale")},
            "topology": self.topology,
            "drops": {"p": list(self.drop_probs), "overrides": _listed(self.link_overrides)},
            "filter": {k: _listed(d[k]) for k in ("sigmas", "epsilon", "max_iterations", "kernel_floor", "weighted_joseph")},
            "trials": self.trials,
            "steps": self.steps,
            "seed": self.seed,
            "algorithms": self.algorithms,
            "outputs": {k: d[k] for k in ("records_csv", "summary_json", "figures_dir")},
        }

    def replace(self, **changes):
        d = asdict(self)
        d.update(changes)
        return ExperimentConfig(**{k: _tupled(v) if isinstance(v, list) else v for k, v in d.items()})

    @property
    def algorithm_list(self):
        return ALGORITHMS if self.algorithms == "both" else (self.algorithms,)

    def filter_config(self, sigma):
        return FilterConfig(
            sigma=sigma, epsilon=self.epsilon, max_iterations=self.max_iterations,
            kernel_floor=self.kernel_floor, weighted_joseph=self.weighted_joseph,
        )

    def build_topology(self):
        if self.topology == "default":
            return default_topology()
        try:
            return read_edge_list(self.topology)
        except OSError as exc:
            raise ConfigError(f"cannot read topology {self.topology}: {exc.strerror or exc}") from None

    def build_model(self, node_count):
        return default_tracking_model(
            self.dt, node_count,
            process_noise=GaussianMixture(self.process_noise),
            measurement_noise=GaussianMixture(self.measurement_noise),
        )

    def build_drop_model(self, node_count, p):
        return DropModel.uniform(node_count, p, self.link_overrides)


def _tupled(v):
    return tuple(_tupled(x) if isinstance(x, list) else x for x in v)


def _listed(v):
    return [_listed(x) for x in v] if isinstance(v, (list, tuple)) else v


@dataclass(frozen=True)
class MsdRecord:
    trial: int
    step: int
    node: int
    sq_error: float
    iterations: int
    algorithm: str = ""
    sigma: float = float("nan")
    p: float = float("nan")


@dataclass
class RecordBlock:
    """Squared errors and iteration counts of one ``(algorithm, sigma, p)``
    run, indexed ``[trial, step - 1, node - 1]``."""

    algorithm: str
    sigma: float
    p: float
    trials: np.ndarray
    sq_error: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    component_msd: np.ndarray = None  # (N, n) mean squared error per state coordinate

    def records(self):
        T, K, N = self.sq_error.shape
        for a, t in enumerate(self.trials):
            for k in range(K):
                for i in range(N):
                    yield MsdRecord(int(t), k + 1, i + 1, float(self.sq_error[a, k, i]),
                                    int(self.iterations[a, k, i]), self.algorithm, self.sigma, self.p)


@dataclass
class SummaryRow:
    node: int
    algorithm: str
    sigma: float
    p: float
    msd_db: float
    avg_iterations: float
    msd_stderr_db: float
    neighbors: int = 0
    nonconverged_steps: int = 0


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    blocks: list = field(default_factory=list)
    summary: list = field(default_factory=list)

    def block(self, algorithm, sigma, p):
        for b in self.blocks:
            if b.algorithm == algorithm and b.sigma == sigma and b.p == p:
                return b
        raise KeyError((algorithm, sigma, p))

    def records(self):
        for b in self.blocks:
            yield from b.records()

    def network_msd_db(self, algorithm, sigma, p):
        e = self.block(algorithm, sigma, p).sq_error
        return _to_db(math.fsum(e.ravel()) / e.size)

    def average_iterations(self, algorithm, sigma, p):
        return float(np.mean(self.block(algorithm, sigma, p).iterations))


def _to_db(mean_sq):
    return 10.0 * math.log10(mean_sq) if mean_sq > 0 else -math.inf


def msd_db(records, node):
    """``10 log10`` of the mean squared error of ``node`` over all steps and
    trials. Accepts :class:`MsdRecord` iterables, record blocks or a result.

    Sums are exactly rounded, so the value does not depend on record order.
    """
    if isinstance(records, ExperimentResult):
        records = records.blocks
    total, count = 0.0, 0
    items = list(records) if not isinstance(records, RecordBlock) else [records]
    if items and isinstance(items[0], RecordBlock):
        vals = [b.sq_error[:, :, node - 1].ravel() for b in items if 1 <= node <= b.sq_error.shape[2]]
        if vals:
            v = np.concatenate(vals)
            total, count = math.fsum(v), v.size
    else:
        mine = [r.sq_error for r in items if r.node == node]
        total, count = math.fsum(mine), len(mine)
    if count == 0:
        raise ValueError(f"no records for node {node}")
    return _to_db(total / count)


class TrialSet:
    """Truth trajectories, drop uniforms and initial estimates for a set of
    trials, ready to drive any number of filter blocks."""

    def __init__(self, config, trial_indices, topology=None, model=None):
        self.config = config
        self.trial_indices = np.asarray(list(trial_indices), dtype=int)
        self.topology = topology or config.build_topology()
        N = self.topology.node_count
        self.model = model or config.build_model(N)
        x0 = np.asarray(config.x0, dtype=float)
        if x0.shape != (self.model.n,):
            raise ConfigError(f"x0 must have length {self.model.n}")
        T, K, n = len(self.trial_indices), config.steps, self.model.n
        self.states = np.empty((T, K, n))
        self.y_flat = np.empty((T, K, sum(self.model.m(j) for j in range(N))))
        self.uniforms = np.empty((T, K, N, N))
        self.init_estimate = np.empty((T, N, n))
        for a, t in enumerate(self.trial_indices):
            process, measurement, drops, init = trial_streams(config.seed, int(t))
            traj = simulate_truth(self.model, x0, K, process, measurement)
            self.states[a] = traj.states
            self.y_flat[a] = np.concatenate(traj.observations, axis=1)
            self.uniforms[a] = drop_uniforms(self.topology, K, drops)
            self.init_estimate[a] = x0 + math.sqrt(config.init_variance) * init.standard_normal((N, n))
        self.init_cov = np.broadcast_to(config.p0_scale * np.eye(n), (T, N, n, n)).copy()

    def run(self, algorithm, sigma, p, stop_after=None):
        """Filter every trial and node; returns a :class:`RecordBlock`.

        With ``stop_after`` the run halts after that many steps and returns the
        :class:`FilterState` grid instead.
        """
        N = self.topology.node_count
        drop_model = self.config.build_drop_model(N, p)
        stacker = NetworkStacker(self.model, self.topology, drop_model)
        fcfg = self.config.filter_config(sigma)
        state = FilterState(self.init_estimate.copy(), self.init_cov.copy())
        T, K = len(self.trial_indices), self.config.steps
        sq = np.empty((T, K, N))
        its = np.empty((T, K, N), dtype=int)
        conv = np.empty((T, K, N), dtype=bool)
        comp = np.zeros((N, self.model.n))
        last = K if stop_after is None else stop_after
        for k in range(last):
            gamma = indicators_from_uniforms(self.uniforms[:, k], drop_model, self.topology)
            stack = stacker.stack(gamma, self.y_flat[:, k])
            if algorithm == "dmckf-dpd":
                state, diag = dmckf_dpd_step(state, self.model, stack, fcfg)
            elif algorithm == "stationary-dkf":
                state, diag = stationary_dkf_step(state, self.model, stack, fcfg)
            else:
                raise ConfigError(f"unknown algorithm {algorithm!r}")
            err = state.estimate - self.states[:, k, None, :]
            sq[:, k] = np.sum(err * err, axis=-1)
            comp += np.sum(err * err, axis=0)
            its[:, k] = diag.iterations
            conv[:, k] = diag.converged
        if stop_after is not None:
            return state
        return RecordBlock(algorithm, float(sigma), float(p), self.trial_indices.copy(), sq, its, conv,
                           comp / (T * K))

    def capture(self, trial_pos, step, node, sigma, p, algorithm="dmckf-dpd"):
        """Augmented system node ``node`` faces at ``step`` (1-based) of the
        ``trial_pos``-th trial, using its unpadded neighborhood stack."""
        if not 1 <= step <= self.config.steps:
            raise ConfigError(f"step must lie in 1..{self.config.steps}")
        N = self.topology.node_count
        drop_model = self.config.build_drop_model(N, p)
        if step > 1:
            grid = self.run(algorithm, sigma, p, stop_after=step - 1)
            est, cov = grid.estimate[trial_pos, node - 1], grid.covariance[trial_pos, node - 1]
        else:
            est, cov = self.init_estimate[trial_pos, node - 1], self.init_cov[trial_pos, node - 1]
        gamma = indicators_from_uniforms(self.uniforms[trial_pos, step - 1], drop_model, self.topology)
        real = DropRealization(step, gamma, drop_model.probabilities)
        obs, start = [], 0
        for j in range(N):
            mj = self.model.m(j)
            obs.append(self.y_flat[trial_pos, step - 1, start : start + mj])
            start += mj
        stack = stack_neighborhood(self.model, self.topology, node, real, obs)
        prior, prior_cov = predict(FilterState(est, cov), self.model.A, self.model.Q)
        return build_augmented(prior, prior_cov, stack), self.states[trial_pos, step - 1]


def trial_streams(seed, trial):
    """Independent generators (process, measurement, drops, init) for one trial."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(trial),))
    return tuple(np.random.Generator(np.random.PCG64(child)) for child in ss.spawn(4))


def run_trial(config, trial_index):
    """All requested ``(algorithm, sigma, p)`` blocks of a single trial."""
    return run_trials(config, [trial_index]).blocks


def run_trials(config, trial_indices, topology=None):
    trials = TrialSet(config, trial_indices, topology)
    result = ExperimentResult(config)
    for p in config.drop_probs:
        baseline = None
        for sigma in config.sigmas:
            for alg in config.algorithm_list:
                if alg == "stationary-dkf":
                    # the baseline ignores sigma; reuse its run across the sweep
                    if baseline is None:
                        baseline = trials.run(alg, sigma, p)
                    block = RecordBlock(alg, float(sigma), float(p), baseline.trials, baseline.sq_error,
                                        baseline.iterations, baseline.converged, baseline.component_msd)
                else:
                    block = trials.run(alg, sigma, p)
                result.blocks.append(block)
    result.summary = summarize(result.blocks, trials.topology)
    return result


def summarize(blocks, topology):
    rows = []
    for b in blocks:
        T = b.sq_error.shape[0]
        for i in range(1, b.sq_error.shape[2] + 1):
            e = b.sq_error[:, :, i - 1]
            mean = float(np.mean(e))
            if T > 1 and mean > 0:
                se = float(np.std(e.mean(axis=1), ddof=1) / math.sqrt(T))
                se_db = 10.0 / math.log(10.0) * se / mean
            else:
                se_db = float("nan")
            rows.append(SummaryRow(
                node=i, algorithm=b.algorithm, sigma=b.sigma, p=b.p,
                msd_db=msd_db(b, i),
                avg_iterations=float(np.mean(b.iterations[:, :, i - 1])),
                msd_stderr_db=se_db,
                neighbors=topology.degree(i),
                nonconverged_steps=int(np.sum(~b.converged[:, :, i - 1])),
            ))
    return rows


def run_experiment(config, write=True):
    """Run every trial, aggregate, and write the configured outputs."""
    result = run_trials(config, range(config.trials))
    if write:
        write_outputs(result)
    return result


def write_outputs(result):
    cfg = result.config
    if cfg.records_csv:
        write_records_csv(result.blocks, cfg.records_csv)
    if cfg.summary_json:
        write_summary_json(result, cfg.summary_json)
    if cfg.figures_dir:
        from .plotting import render_report

        render_report(result, cfg.figures_dir)


def _open_for_write(path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return path.open("w", encoding="utf-8", newline="\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_records_csv(blocks, path):
    with _open_for_write(path) as fh:
        fh.write(CSV_HEADER + "\n")
        for b in blocks:
            T, K, N = b.sq_error.shape
            cols = np.column_stack([
                np.repeat(b.trials, K * N),
                np.tile(np.repeat(np.arange(1, K + 1), N), T),
                np.tile(np.arange(1, N + 1), T * K),
                b.sq_error.ravel(),
                b.iterations.ravel(),
            ])
            fmt = f"%d,%d,%d,{b.algorithm},{b.sigma!r},{b.p!r},%.17g,%d"
            np.savetxt(fh, cols, fmt=fmt, newline="\n")


def read_records_csv(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header!r}")
        for line in fh:
            t, k, i, alg, sigma, p, sq, it = line.rstrip("\n").split(",")
            out.append(MsdRecord(int(t), int(k), int(i), float(sq), int(it), alg, float(sigma), float(p)))
    return out


def summary_payload(result):
    cfg = result.config
    network = []
    for b in result.blocks:
        network.append({
            "algorithm": b.algorithm, "sigma": b.sigma, "p": b.p,
            "msd_db": result.network_msd_db(b.algorithm, b.sigma, b.p),
            "avg_iterations": float(np.mean(b.iterations)),
            "nonconverged_steps": int(np.sum(~b.converged)),
            "component_msd_db": [_to_db(v) for v in b.component_msd.mean(axis=0)],
        })
    return {
        "msd_convention": "MSD(dB) = 10*log10(mean over steps and trials of ||x - x_hat||^2)",
        "config": cfg.to_dict(),
        "network": network,
        "nodes": [asdict(r) for r in result.summary],
    }


def write_summary_json(result, path):
    with _open_for_write(path) as fh:
        json.dump(summary_payload(result), fh, indent=2, allow_nan=True)
        fh.write("\n")
