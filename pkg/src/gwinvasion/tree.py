"""Lazily realized Galton-Watson trees with Ulam-Harris addressing.

Vertices live in a growable arena of parallel lists and are identified by
their integer index (``NodeId``).  The children of a vertex are allocated
as one contiguous block the first time it is expanded, so child ``j`` of
``v`` is always ``first_child[v] + j``.

Randomness is keyed by address (see :mod:`gwinvasion.rng`): the degree and
uniform weight of a vertex are pure functions of the tree seed and the
vertex's position, so expanding eagerly, lazily, or in a different order
realizes the same tree.
"""

from dataclasses import dataclass, field

import numpy as np

from . import rng

DEFAULT_MAX_NODES = 200_000_000
DEFAULT_PROXY_DEPTH = 25


class ResourceError(RuntimeError):
    """Raised when a tree would exceed its node budget."""


class TreeArena:
    """A Galton-Watson tree realized on demand.

    ``weight_seed`` redraws every uniform weight while keeping the tree
    itself (all degrees) fixed; this is how quenched replicates are made.
    The root's weight exists but is never used for connectivity.
    """

    def __init__(self, dist, seed, weight_seed=None, max_nodes=DEFAULT_MAX_NODES):
        self.dist = dist
        self.seed = int(seed)
        self.weight_seed = weight_seed
        self.max_nodes = max_nodes
        self._wsalt = 0 if weight_seed is None else rng.mix(int(weight_seed) ^ 0x6A09E667F3BCC909)
        self._fixed_deg = dist.support[0] if len(dist.support) == 1 else None
        k0 = rng.root_key(self.seed)
        self.parent = [-1]
        self.depth = [0]
        self.slot = [0]
        self.key = [k0]
        self.u = [rng.weight_of(k0 ^ self._wsalt)]
        self.deg = [self._degree(k0)]
        self.first_child = [-1]

    def _degree(self, key):
        if self._fixed_deg is not None:
            return self._fixed_deg
        return self.dist.degree_from_uniform(rng.degree_uniform(key))

    def __len__(self):
        return len(self.parent)

    @property
    def root(self):
        return 0

    def is_expanded(self, node):
        return self.first_child[node] >= 0

    def expand(self, node):
        """Realize the children of ``node`` (idempotent) and return their ids."""
        first = self.first_child[node]
        d = self.deg[node]
        if first >= 0:
            return range(first, first + d)
        first = len(self.parent)
        if first + d > self.max_nodes:
            raise ResourceError(
                f"node budget {self.max_nodes} exceeded while expanding depth {self.depth[node] + 1}"
            )
        self.first_child[node] = first
        key = self.key[node]
        dep = self.depth[node] + 1
        wsalt = self._wsalt
        for j in range(d):
            ck = rng.child_key(key, j)
            self.parent.append(node)
            self.depth.append(dep)
            self.slot.append(j)
            self.key.append(ck)
            self.u.append(rng.weight_of(ck ^ wsalt))
            self.deg.append(self._degree(ck))
            self.first_child.append(-1)
        return range(first, first + d)

    def children(self, node):
        return self.expand(node)

    def address(self, node):
        """Ulam-Harris address (tuple of child slots) of ``node``."""
        out = []
        while node != 0:
            out.append(self.slot[node])
            node = self.parent[node]
        return tuple(reversed(out))

    def find(self, address):
        node = 0
        for j in address:
            node = self.expand(node)[j]
        return node

    def ancestors(self, node):
        """Path from the root to ``node`` inclusive."""
        out = [node]
        while node != 0:
            node = self.parent[node]
            out.append(node)
        return out[::-1]

    def is_ancestor(self, a, b):
        """True when ``a`` is ``b`` or an ancestor of ``b``."""
        da = self.depth[a]
        while self.depth[b] > da:
            b = self.parent[b]
        return a == b

    def expand_to_depth(self, node, depth):
        """Realize all of ``T(node)`` down to ``depth`` levels below ``node``."""
        frontier = [node]
        for _ in range(depth):
            nxt = []
            for v in frontier:
                nxt.extend(self.expand(v))
            frontier = nxt
        return frontier

    def view(self, node=0):
        return TreeView(self, node)

    # serialization ------------------------------------------------------

    def dump(self):
        """Line-oriented prefix dump: ``nodeid parentid depth deg u_weight`` (hex floats)."""
        lines = []
        for i in range(len(self.parent)):
            lines.append(f"{i} {self.parent[i]} {self.depth[i]} {self.deg[i]} {self.u[i].hex()}")
        return "\n".join(lines) + "\n"


def load_prefix(text):
    """Parse :meth:`TreeArena.dump` output into a list of records."""
    out = []
    for line in text.splitlines():
        if not line.strip():
            continue
        i, par, dep, deg, u = line.split()
        out.append((int(i), int(par), int(dep), int(deg), float.fromhex(u)))
    return out


class TreeView:
    """Read/expand view of ``T(node)`` with depths rebased to 0; shares storage."""

    def __init__(self, arena, node):
        self.arena = arena
        self.root = node
        self.base_depth = arena.depth[node]
        self.dist = arena.dist

    def depth(self, node):
        return self.arena.depth[node] - self.base_depth

    def expand(self, node):
        return self.arena.expand(node)

    def view(self, node):
        return TreeView(self.arena, node)


def new_tree(dist, seed, **kwargs):
    return TreeArena(dist, seed, **kwargs)


def subtree_handle(arena, node):
    return arena.view(node) if isinstance(arena, TreeArena) else arena.arena.view(node)


def resolve(tree):
    """(arena, root) for either an arena or a view."""
    if isinstance(tree, TreeView):
        return tree.arena, tree.root
    return tree, 0


# level structure --------------------------------------------------------


@dataclass
class Levels:
    """Breadth-first level structure below a vertex.

    ``deg[k]`` lists the degrees of the generation-``k`` vertices, ordered so
    that the children of the ``i``-th vertex of generation ``k`` form the
    ``i``-th contiguous block of generation ``k + 1``.  ``branch[k]`` gives,
    for each generation-``k`` vertex (``k >= 1``), the slot of the root child
    it descends from.
    """

    deg: list
    branch: list = field(default_factory=list)

    @property
    def sizes(self):
        return [len(d) for d in self.deg]


def level_structure(tree, depth, realize=False, max_nodes=None):
    """Generation degrees of ``T(root)`` for generations ``0..depth``.

    With ``realize=False`` the levels are computed by vectorized hashing
    without touching the arena; the result is identical to what expansion
    would realize.
    """
    arena, root = resolve(tree)
    budget = arena.max_nodes if max_nodes is None else max_nodes
    if realize:
        deg_levels = []
        branch_levels = []
        frontier = [root]
        branch = np.zeros(1, dtype=np.int64)
        for k in range(depth + 1):
            deg_levels.append(np.array([arena.deg[v] for v in frontier], dtype=np.int64))
            branch_levels.append(branch)
            if k == depth:
                break
            nxt = []
            for v in frontier:
                nxt.extend(arena.expand(v))
            if k == 0:
                branch = np.arange(len(nxt), dtype=np.int64)
            else:
                branch = np.repeat(branch, deg_levels[-1])
            frontier = nxt
        return Levels(deg_levels, branch_levels)
    dist = arena.dist
    fixed = arena._fixed_deg
    keys = np.array([arena.key[root]], dtype=np.uint64)
    deg0 = np.array([arena.deg[root]], dtype=np.int64)
    deg_levels = [deg0]
    branch = np.zeros(1, dtype=np.int64)
    branch_levels = [branch]
    for k in range(1, depth + 1):
        prev = deg_levels[-1]
        total = int(prev.sum())
        if total > budget:
            raise ResourceError(f"node budget {budget} exceeded at depth {k}")
        offsets = np.cumsum(prev) - prev
        slots = np.arange(total, dtype=np.int64) - np.repeat(offsets, prev)
        keys = rng.child_keys_array(np.repeat(keys, prev), slots)
        if fixed is not None:
            d = np.full(total, fixed, dtype=np.int64)
        else:
            d = dist.degrees_from_uniforms(rng.degree_uniforms_array(keys))
        branch = slots.copy() if k == 1 else np.repeat(branch, prev)
        deg_levels.append(d)
        branch_levels.append(branch)
    return Levels(deg_levels, branch_levels)


# martingale -------------------------------------------------------------


@dataclass
class MartingaleTrace:
    """Generation sizes ``Z_n`` and ``W_n = Z_n / mu**n`` below a vertex."""

    Z: list
    W: list
    mu: float
    child_Z: np.ndarray  # shape (depth + 1, deg(root)); child_Z[n, i] = Z_n^{(i)}

    @property
    def depth(self):
        return len(self.Z) - 1

    def child_W(self, n):
        """W_n^{(i)} for each child slot i of the root."""
        return self.child_Z[n] / self.mu**n

    @property
    def W_bar(self):
        return max(self.W)


def martingale(tree, depth, realize=False):
    """Z_n, W_n (and the per-child decomposition) for ``n <= depth``."""
    arena, root = resolve(tree)
    mu = arena.dist.mean
    lv = level_structure(tree, depth, realize=realize)
    nchild = arena.deg[root]
    Z = [len(d) for d in lv.deg]
    W = [z / mu**n for n, z in enumerate(Z)]
    child_Z = np.zeros((depth + 1, nchild), dtype=np.int64)
    for n in range(1, depth + 1):
        child_Z[n] = np.bincount(lv.branch[n], minlength=nchild)
    return MartingaleTrace(Z=Z, W=W, mu=mu, child_Z=child_Z)


def generation_sizes(dist, seeds, depth):
    """Z_0..Z_depth for many independent trees (fast path, nothing stored)."""
    out = np.zeros((len(seeds), depth + 1), dtype=np.int64)
    for i, s in enumerate(seeds):
        arena = TreeArena(dist, s)
        lv = level_structure(arena, depth - 1) if depth > 0 else None
        if lv is None:
            out[i, 0] = 1
            continue
        sizes = lv.sizes
        out[i, :depth] = sizes
        out[i, depth] = int(lv.deg[-1].sum())
    return out
