"""Performance maps: gridded per-player policies.

A map discretizes the normalized state cube ``[0, 1]^m`` into ``p^m`` equidistant
support cells. Storage is sparse: only visited cells hold a best action, a best
utility and a bounded sample stack, so a 40-point grid over a 3-D view costs
nothing until it is explored. Unvisited cells read as ``-inf`` utility and do not
take part in interpolation.
"""
import csv
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NoVisitedCells, NonFiniteSample, StateOutOfRange, WrongLeaderCount

# sample stack columns
OWN, OTHER, TARGET, AUX = range(4)
SAMPLE_WIDTH = 4


def _components(state, dims):
    """State as a list of floats, validated against ``[0, 1]^dims``."""
    xs = state.tolist() if isinstance(state, np.ndarray) else [float(x) for x in state]
    if len(xs) != dims or (isinstance(state, np.ndarray) and state.ndim != 1):
        raise StateOutOfRange(f"expected {dims} state components, got {len(xs)}")
    for x in xs:
        if not 0.0 <= x <= 1.0:
            raise StateOutOfRange(f"state {xs} outside [0, 1]")
    return xs


@dataclass(frozen=True)
class GridSpec:
    dims: int
    resolution: int = 40

    def __post_init__(self):
        if self.dims < 1:
            raise ValueError("grid needs at least one dimension")
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2")

    @property
    def spacing(self):
        return 1.0 / (self.resolution - 1)

    @property
    def cell_count(self):
        return self.resolution ** self.dims

    def locate(self, state):
        """Flat index of the nearest support vector (row-major, ties to the larger index)."""
        xs = _components(state, self.dims)
        p = self.resolution
        idx = 0
        for x in xs:
            # int(x + 0.5) rounds half up on [0, 1], which is the tie-to-larger rule
            k = int(x * (p - 1) + 0.5)
            idx = idx * p + (k if k < p else p - 1)
        return idx

    def multi_index(self, index):
        p = self.resolution
        out = []
        for _ in range(self.dims):
            index, r = divmod(index, p)
            out.append(r)
        return tuple(reversed(out))

    def coords(self, index):
        return np.array(self.multi_index(index), dtype=float) * self.spacing


class PerformanceMap:
    """One layer of a player's policy.

    ``record_sample`` pushes ``(own action, other summary, target, aux)`` onto the
    located cell's FIFO stack and onto a layer-wide ring buffer. ``target`` is the
    potential the owning player maximizes and drives the best-action bookkeeping;
    ``aux`` carries a second potential for players that model both roles.
    """

    def __init__(self, grid, gamma_map=1e-3, stack_capacity=100, global_capacity=1000):
        if gamma_map <= 0:
            raise ValueError("gamma_map must be > 0")
        self.grid = grid
        self.gamma_map = float(gamma_map)
        self.stack_capacity = int(stack_capacity)
        self.global_capacity = int(global_capacity)
        self._slot = {}
        self._cells = np.empty(0, dtype=np.int64)
        self._coords = np.empty((0, grid.dims))
        self._actions = np.empty(0)
        self._utilities = np.empty(0)
        self._stack = np.empty((0, self.stack_capacity, SAMPLE_WIDTH))
        self._count = np.empty(0, dtype=np.int64)
        self._head = np.empty(0, dtype=np.int64)
        self._n = 0
        self._global = np.zeros((self.global_capacity, SAMPLE_WIDTH))
        self._g_count = 0
        self._g_head = 0

    # -- storage ----------------------------------------------------------

    def _grow(self):
        cap = max(16, 2 * len(self._actions))
        n = self._n

        def widen(a, fill=0.0):
            out = np.full((cap,) + a.shape[1:], fill, dtype=a.dtype)
            out[:n] = a[:n]
            return out

        self._cells = widen(self._cells, 0)
        self._coords = widen(self._coords)
        self._actions = widen(self._actions)
        self._utilities = widen(self._utilities, -np.inf)
        self._stack = widen(self._stack)
        self._count = widen(self._count, 0)
        self._head = widen(self._head, 0)

    def _ensure_slot(self, q):
        slot = self._slot.get(q)
        if slot is None:
            if self._n == len(self._actions):
                self._grow()
            slot = self._n
            self._n += 1
            self._slot[q] = slot
            self._cells[slot] = q
            self._coords[slot] = self.grid.coords(q)
            self._utilities[slot] = -np.inf
        return slot

    # -- queries ----------------------------------------------------------

    @property
    def cell_count(self):
        return self.grid.cell_count

    @property
    def n_visited(self):
        return self._n

    def locate_cell(self, state):
        return self.grid.locate(state)

    def is_visited(self, q):
        return q in self._slot

    def best_action(self, q):
        slot = self._slot.get(q)
        return None if slot is None else float(self._actions[slot])

    def best_utility(self, q):
        slot = self._slot.get(q)
        return -math.inf if slot is None else float(self._utilities[slot])

    def visited_cells(self):
        order = np.argsort(self._cells[: self._n], kind="stable")
        return self._cells[: self._n][order].tolist()

    def interpolate(self, state):
        """Global inverse-distance interpolation of best actions, clamped to [0, 1]."""
        if self._n == 0:
            raise NoVisitedCells("performance map has no visited cells")
        query = np.array(_components(state, self.grid.dims))
        a = kernels.idw_interpolate(self._coords[: self._n], self._actions[: self._n],
                                    query, self.gamma_map)
        return min(max(a, 0.0), 1.0)

    def weights(self, state):
        return kernels.idw_weights(self._coords[: self._n], state, self.gamma_map)

    # -- mutation ---------------------------------------------------------

    def record_sample(self, state, own_action, other_summary, utility, aux=0.0):
        """Push a sample to the located cell; returns the cell index."""
        vals = (float(own_action), float(other_summary), float(utility), float(aux))
        if not math.isfinite(sum(vals)):
            raise NonFiniteSample(f"non-finite sample {vals}")
        q = self.grid.locate(state)
        slot = self._ensure_slot(q)
        W = self.stack_capacity
        h = self._head[slot]
        self._stack[slot, h] = vals
        self._head[slot] = (h + 1) % W
        if self._count[slot] < W:
            self._count[slot] += 1
        g = self._g_head
        self._global[g] = vals
        self._g_head = (g + 1) % self.global_capacity
        self._g_count = min(self._g_count + 1, self.global_capacity)
        if utility > self._utilities[slot]:
            self._utilities[slot] = utility
            self._actions[slot] = own_action
        return q

    def set_action(self, q, value):
        slot = self._ensure_slot(q)
        self._actions[slot] = value

    def set_cell(self, q, action, utility):
        slot = self._ensure_slot(q)
        self._actions[slot] = action
        self._utilities[slot] = utility

    def cell_samples(self, q):
        """Samples of cell ``q`` oldest first, shape ``(k, 4)``."""
        slot = self._slot.get(q)
        if slot is None:
            return np.empty((0, SAMPLE_WIDTH))
        k = self._count[slot]
        if k < self.stack_capacity:
            return self._stack[slot, :k].copy()
        h = self._head[slot]
        return np.concatenate([self._stack[slot, h:], self._stack[slot, :h]])

    def cell_sample_count(self, q):
        slot = self._slot.get(q)
        return 0 if slot is None else int(self._count[slot])

    def global_samples(self):
        k = self._g_count
        if k < self.global_capacity:
            return self._global[:k].copy()
        h = self._g_head
        return np.concatenate([self._global[h:], self._global[:h]])

    # -- (de)serialization -------------------------------------------------

    def rows(self):
        for q in self.visited_cells():
            slot = self._slot[q]
            yield q, float(self._actions[slot]), float(self._utilities[slot])

    def load_rows(self, rows):
        for q, a, u in rows:
            self.set_cell(int(q), float(a), float(u))


class LeaderActionEncoder:
    """Maps a leader coalition action to a follower map layer.

    ``cartesian``: one bin per leader, index ``sum_g bin(a_g) * B**g``.
    ``summary``: ``G * B`` uniform bins over the coalition mean.
    """

    SCHEMES = ("cartesian", "summary")

    def __init__(self, n_leaders, bins_per_leader=5, scheme="cartesian"):
        if n_leaders < 1:
            raise ValueError("encoder needs at least one leader")
        if bins_per_leader < 1:
            raise ValueError("bins_per_leader must be >= 1")
        if scheme not in self.SCHEMES:
            raise ValueError(f"unknown encoder scheme {scheme!r}")
        self.n_leaders = n_leaders
        self.bins = bins_per_leader
        self.scheme = scheme

    @property
    def layer_count(self):
        if self.scheme == "cartesian":
            return self.bins ** self.n_leaders
        return self.n_leaders * self.bins

    def bin(self, a, bins=None):
        B = self.bins if bins is None else bins
        return min(int(math.floor(a * B)), B - 1)

    def encode(self, coalition):
        actions = getattr(coalition, "actions", coalition)
        actions = [float(a) for a in actions]
        if len(actions) != self.n_leaders:
            raise WrongLeaderCount(f"expected {self.n_leaders} leader actions, got {len(actions)}")
        if self.scheme == "cartesian":
            return sum(self.bin(a) * self.bins ** g for g, a in enumerate(actions))
        return self.bin(sum(actions) / len(actions), self.n_leaders * self.bins)


class StackedPerformanceMap:
    """Follower policy: one ``PerformanceMap`` per encoded leader coalition action."""

    def __init__(self, grid, encoder, **map_kwargs):
        self.grid = grid
        self.encoder = encoder
        self.layers = [PerformanceMap(grid, **map_kwargs) for _ in range(encoder.layer_count)]

    @property
    def layer_count(self):
        return len(self.layers)

    def layer_index(self, coalition):
        return self.encoder.encode(coalition)

    def select_layer(self, coalition):
        return self.layers[self.encoder.encode(coalition)]

    def nearest_trained_layer(self, index):
        """Closest layer (by index distance, lower first) that has visited cells."""
        for off in range(self.layer_count):
            for j in (index - off, index + off):
                if 0 <= j < self.layer_count and self.layers[j].n_visited:
                    return j
        return None


def select_layer(stacked, coalition):
    return stacked.select_layer(coalition)


def encode_leader_actions(encoder, coalition):
    return encoder.encode(coalition)


def write_map_csv(path, layers):
    """Write ``layer, cell, best_action, best_utility`` rows (visited cells only)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "cell", "best_action", "best_utility"])
        for li, layer in enumerate(layers):
            for q, a, u in layer.rows():
                w.writerow([li, q, repr(a), repr(u)])


def read_map_csv(path, layers):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != ["layer", "cell", "best_action", "best_utility"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for li, q, a, u in r:
            layers[int(li)].set_cell(int(q), float(a), float(u))
