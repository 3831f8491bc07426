"""Sensor-network topology, Bernoulli packet drops and neighborhood stacking.

Node labels are 1-based everywhere in the public API (edge-list files, CSV
output, ``neighborhood``); arrays are indexed with ``label - 1``.
"""

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.linalg import block_diag

from .errors import InvalidParameterError

DEFAULT_TOPOLOGY_FILE = "default_topology.edges"
DEFAULT_TOPOLOGY_VERSION = 1
DEFAULT_TOPOLOGY_SEED = 20200601
# (node label, degree) pairs the default topology is edited to contain
DEFAULT_DEGREE_TARGETS = ((16, 1), (5, 2), (4, 3), (2, 4), (8, 5), (9, 6), (7, 7))


@dataclass(frozen=True)
class Topology:
    node_count: int
    edges: frozenset

    def __post_init__(self):
        clean = set()
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise InvalidParameterError(f"self-loop on node {a}")
            for v in (a, b):
                if not 1 <= v <= self.node_count:
                    raise InvalidParameterError(f"node {v} outside 1..{self.node_count}")
            clean.add((min(a, b), max(a, b)))
        object.__setattr__(self, "edges", frozenset(clean))

    def neighbors(self, i):
        self._check(i)
        return sorted({b if a == i else a for a, b in self.edges if i in (a, b)})

    def degree(self, i):
        return len(self.neighbors(i))

    def adjacency(self):
        adj = np.zeros((self.node_count, self.node_count), dtype=bool)
        for a, b in self.edges:
            adj[a - 1, b - 1] = adj[b - 1, a - 1] = True
        return adj

    def is_connected(self):
        seen, todo = {1}, [1]
        while todo:
            for j in self.neighbors(todo.pop()):
                if j not in seen:
                    seen.add(j)
                    todo.append(j)
        return len(seen) == self.node_count

    def _check(self, i):
        if not (isinstance(i, (int, np.integer)) and 1 <= i <= self.node_count):
            raise InvalidParameterError(f"invalid node index {i!r} for {self.node_count} nodes")


def neighborhood(topology, i):
    """Node ``i`` first, then its neighbors in ascending order."""
    return [i] + topology.neighbors(i)


def read_edge_list(path, node_count=None):
    """Parse ``i j`` lines (1-based, ``#`` comments). Node count defaults to
    the largest label seen, or an ``# nodes: N`` header when present."""
    path = Path(path)
    edges, declared, largest = [], None, 0
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line, _, comment = raw.partition("#")
        if comment.strip().lower().startswith("nodes:"):
            declared = int(comment.split(":", 1)[1])
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InvalidParameterError(f"{path}:{lineno}: expected 'i j', got {raw!r}")
        a, b = int(parts[0]), int(parts[1])
        edges.append((a, b))
        largest = max(largest, a, b)
    return Topology(node_count or declared or largest, frozenset(edges))


def format_edge_list(topology, header=()):
    lines = [f"# {h}" for h in header]
    lines.append(f"# nodes: {topology.node_count}")
    lines += [f"{a} {b}" for a, b in sorted(topology.edges)]
    return "\n".join(lines) + "\n"


def write_edge_list(topology, path, header=()):
    Path(path).write_text(format_edge_list(topology, header), encoding="utf-8", newline="\n")


def default_topology():
    """The shipped 20-node network (see :func:`generate_default_topology`)."""
    text = resources.files("dmckf.data").joinpath(DEFAULT_TOPOLOGY_FILE).read_text(encoding="utf-8")
    edges = []
    for raw in text.splitlines():
        line = raw.partition("#")[0].split()
        if line:
            edges.append((int(line[0]), int(line[1])))
    return Topology(20, frozenset(edges))


def generate_default_topology(seed=DEFAULT_TOPOLOGY_SEED, node_count=20, radius=0.32):
    """Seeded random geometric graph edited to hit ``DEFAULT_DEGREE_TARGETS``.

    Target nodes are fixed one at a time: surplus edges go to the
    highest-degree unfixed neighbor, missing edges come from the nearest
    unfixed non-neighbor. Disconnected pieces are then joined through
    their closest unfixed pair. Seeds are tried in sequence until the
    result is connected and every target holds.
    """
    for attempt in range(1000):
        rng = np.random.default_rng(seed + attempt)
        pts = rng.random((node_count, 2))
        dist = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        adj = (dist < radius) & ~np.eye(node_count, dtype=bool)
        fixed = set()
        for label, target in DEFAULT_DEGREE_TARGETS:
            i = label - 1
            while adj[i].sum() > target:
                cand = [j for j in np.flatnonzero(adj[i]) if j not in fixed]
                if not cand:
                    break
                j = max(cand, key=lambda j: (adj[j].sum(), -j))
                adj[i, j] = adj[j, i] = False
            while adj[i].sum() < target:
                cand = [j for j in range(node_count) if j != i and not adj[i, j] and j not in fixed]
                if not cand:
                    break
                j = min(cand, key=lambda j: (dist[i, j], j))
                adj[i, j] = adj[j, i] = True
            fixed.add(i)
        _join_components(adj, dist, fixed)
        edges = frozenset((int(a) + 1, int(b) + 1) for a, b in zip(*np.nonzero(np.triu(adj))))
        topo = Topology(node_count, edges)
        if topo.is_connected() and all(topo.degree(lab) == d for lab, d in DEFAULT_DEGREE_TARGETS):
            return topo
    raise RuntimeError("could not build a default topology")


def _components(adj):
    n = len(adj)
    label = -np.ones(n, dtype=int)
    for s in range(n):
        if label[s] >= 0:
            continue
        label[s] = s
        todo = [s]
        while todo:
            for j in np.flatnonzero(adj[todo.pop()]):
                if label[j] < 0:
                    label[j] = s
                    todo.append(j)
    return label


def _join_components(adj, dist, fixed):
    while True:
        comp = _components(adj)
        roots = np.unique(comp)
        if len(roots) == 1:
            return
        free = [j for j in range(len(adj)) if j not in fixed]
        best = None
        for a in free:
            for b in free:
                if comp[a] == roots[0] and comp[b] != roots[0]:
                    if best is None or dist[a, b] < dist[best]:
                        best = (a, b)
        if best is None:
            return
        adj[best] = adj[best[::-1]] = True


@dataclass(frozen=True)
class DropModel:
    """Reception probabilities ``p[i, j]`` for node ``i`` hearing node ``j``
    (0-based array, diagonal fixed at 1)."""

    probabilities: np.ndarray

    def __post_init__(self):
        p = np.array(self.probabilities, dtype=float)
        np.fill_diagonal(p, 1.0)
        if np.any(p <= 0) or np.any(p > 1):
            raise InvalidParameterError("reception probabilities must lie in (0, 1]")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    @classmethod
    def uniform(cls, node_count, p, overrides=()):
        """Same ``p`` on every link; ``overrides`` holds ``(i, j, p_ij)``
        with 1-based labels and applies to the directed link only."""
        probs = np.full((node_count, node_count), float(p))
        for i, j, pij in overrides:
            probs[int(i) - 1, int(j) - 1] = float(pij)
        return cls(probs)

    def p(self, i, j):
        return float(self.probabilities[i - 1, j - 1])


@dataclass(frozen=True)
class DropRealization:
    """Indicators ``gamma[i, j]`` (0-based) for one step; the diagonal is 1."""

    step: int
    gamma: np.ndarray
    probabilities: np.ndarray

    def received(self, i, j):
        return bool(self.gamma[i - 1, j - 1])


def drop_uniforms(topology, steps, rng):
    """Uniform variates behind the drop indicators, shape ``(steps, N, N)``."""
    n = topology.node_count
    return rng.random((steps, n, n))


def indicators_from_uniforms(u, drop_model, topology):
    """``gamma[i, j] = u[i, j] < p[i, j]`` on links, 1 on the diagonal, 0 elsewhere.

    Sharing ``u`` across drop probabilities couples experiments that differ
    only in ``p``.
    """
    gamma = (u < drop_model.probabilities) & topology.adjacency()
    idx = np.arange(topology.node_count)
    gamma[..., idx, idx] = True
    return gamma


def sample_drop_sequence(drop_model, topology, steps, rng):
    """Indicators for ``steps`` consecutive steps, shape ``(steps, N, N)``.

    Consumes the stream exactly like ``steps`` calls of :func:`sample_drops`.
    """
    return indicators_from_uniforms(drop_uniforms(topology, steps, rng), drop_model, topology)


def sample_drops(drop_model, topology, k, rng):
    """Independent Bernoulli reception indicator for every directed link."""
    gamma = sample_drop_sequence(drop_model, topology, 1, rng)[0]
    return DropRealization(step=k, gamma=gamma, probabilities=drop_model.probabilities)


@dataclass
class NeighborhoodStack:
    """Stacked observation model of one neighborhood.

    Rows are grouped by member in ``members`` order. ``gamma`` and ``p`` hold
    one entry per row, so ``D_gamma = diag(gamma)`` and ``D_p = diag(p)``.
    All array fields may carry matching leading batch dimensions; rows with
    ``C == 0`` and ``gamma == 0`` act as inert padding.
    """

    members: tuple
    C: np.ndarray
    R: np.ndarray
    gamma: np.ndarray
    p: np.ndarray
    y: np.ndarray

    @property
    def m_ia(self):
        return self.C.shape[-2]

    @property
    def D_gamma(self):
        return _diag(self.gamma)

    @property
    def D_p(self):
        return _diag(self.p)

    @property
    def s(self):
        """Received vector: dropped blocks are exactly zero."""
        return np.where(self.gamma > 0, self.gamma * self.y, 0.0)

    @property
    def H(self):
        """``D_gamma @ C`` computed row-wise."""
        return self.gamma[..., None] * self.C

    def row_slices(self, model):
        out, start = {}, 0
        for j in self.members:
            out[j] = slice(start, start + model.m(j - 1))
            start += model.m(j - 1)
        return out


def _diag(v):
    out = np.zeros(v.shape + v.shape[-1:])
    idx = np.arange(v.shape[-1])
    out[..., idx, idx] = v
    return out


def stack_neighborhood(model, topology, i, realization, observations):
    """Stack ``C``, ``R``, drop indicators and observations over ``mho_i``.

    ``observations`` maps each node label (or 0-based position in a
    sequence) to that node's measurement vector.
    """
    members = neighborhood(topology, i)
    ys = []
    for j in members:
        try:
            y = observations[j] if isinstance(observations, dict) else observations[j - 1]
        except (KeyError, IndexError):
            raise InvalidParameterError(f"missing observation for node {j} in neighborhood of {i}") from None
        if y is None:
            raise InvalidParameterError(f"missing observation for node {j} in neighborhood of {i}")
        ys.append(np.atleast_1d(np.asarray(y, dtype=float)))
    gamma, p = [], []
    for j in members:
        mj = model.m(j - 1)
        gamma += [float(realization.gamma[i - 1, j - 1])] * mj
        p += [float(realization.probabilities[i - 1, j - 1])] * mj
    return NeighborhoodStack(
        members=tuple(members),
        C=np.vstack([model.C[j - 1] for j in members]),
        R=block_diag(*[model.R[j - 1] for j in members]),
        gamma=np.array(gamma),
        p=np.array(p),
        y=np.concatenate(ys),
    )


class NetworkStacker:
    """Builds padded, batched neighborhood stacks for every node at once.

    Each node's stack is padded to the widest neighborhood with inert rows so
    that all nodes (and any number of trials) share one array shape.
    """

    def __init__(self, model, topology, drop_model):
        self.model = model
        self.topology = topology
        N = topology.node_count
        offsets = np.cumsum([0] + [model.m(j) for j in range(N)])
        self.total_rows = int(offsets[-1])
        rows = []
        for i in range(1, N + 1):
            r = []
            for j in neighborhood(topology, i):
                r += [(j - 1, offsets[j - 1] + k, k) for k in range(model.m(j - 1))]
            rows.append(r)
        self.width = max(len(r) for r in rows)
        W, n = self.width, model.n
        self.row_owner = np.zeros((N, W), dtype=int)
        self.row_index = np.full((N, W), self.total_rows, dtype=int)  # pad -> zero column
        self.valid = np.zeros((N, W), dtype=bool)
        self.C = np.zeros((N, W, n))
        self.R = np.zeros((N, W, W))
        self.p = np.ones((N, W))
        for i, r in enumerate(rows):
            for a, (j, flat, k) in enumerate(r):
                self.row_owner[i, a] = j
                self.row_index[i, a] = flat
                self.valid[i, a] = True
                self.C[i, a] = model.C[j][k]
                self.p[i, a] = drop_model.probabilities[i, j]
            start = 0
            for j in neighborhood(topology, i + 1):
                mj = model.m(j - 1)
                self.R[i, start : start + mj, start : start + mj] = model.R[j - 1]
                start += mj
            for a in range(len(r), W):
                self.R[i, a, a] = 1.0
        self.m_ia = self.valid.sum(axis=1)
        self.members = tuple(tuple(neighborhood(topology, i)) for i in range(1, N + 1))

    def stack(self, gamma, y_flat):
        """``gamma``: ``(..., N, N)`` indicators; ``y_flat``: ``(..., total_rows)``.

        Returns one :class:`NeighborhoodStack` with batch shape ``(..., N)``.
        """
        N = self.topology.node_count
        batch = gamma.shape[:-2]
        g = np.take_along_axis(
            gamma.astype(float), np.broadcast_to(self.row_owner, batch + (N, self.width)), axis=-1
        )
        g = g * self.valid
        y_pad = np.concatenate([y_flat, np.zeros(batch + (1,))], axis=-1)
        y = y_pad[..., self.row_index]
        shape = batch + (N, self.width)
        return NeighborhoodStack(
            members=self.members,
            C=np.broadcast_to(self.C, shape + (self.model.n,)),
            R=np.broadcast_to(self.R, shape + (self.width,)),
            gamma=g,
            p=np.broadcast_to(self.p, shape),
            y=y,
        )
