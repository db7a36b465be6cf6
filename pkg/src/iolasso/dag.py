"""DAG of candidate zero patterns for hierarchical group thresholding.

Every pair of an input group g and an output group h defines a block
B_h^g of the coefficient matrix.  Four kinds of patterns can be driven
to zero inside a block:

    Block(g, h)     all of {(k, j): k in h, j in g}
    Row(k, g)       one row of the block, {(k, j): j in g}
    Col(j, h)       one column of the block, {(k, j): k in h}
    Entry(k, j)     a single coefficient

Patterns are partially ordered by containment of their coefficient sets;
within a block the covering relation is Block -> Row, Block -> Col,
Row -> Entry, Col -> Entry, which is what the builder emits.  A dummy
root points at every block, so a depth-first walk that skips the
descendants of any pattern found (or driven) to zero touches each
candidate at most once per sweep.

Patterns shared by several blocks (an entry under two overlapping
blocks, a row under two output groups) are deduplicated into single
nodes with multiple parents; identity is (kind, indices).
"""

from __future__ import annotations

import threading

from .model import GroupStructure

ROOT = 0
BLOCK = 1
ROW = 2
COL = 3
ENTRY = 4

_KIND_NAMES = {ROOT: "root", BLOCK: "block", ROW: "row", COL: "col", ENTRY: "entry"}

# Above this many blocks the per-block subgraphs are materialized on first
# visit instead of eagerly at construction time.
LAZY_BLOCK_THRESHOLD = 10**6


class PatternDag:
    """Zero-pattern DAG over a (singleton-completed) group structure.

    Node arrays are parallel: `kinds[i]`, `a_idx[i]`, `b_idx[i]` identify
    node i (block: group indices (gi, hi); row: (k, gi); col: (j, hi);
    entry: (k, j)).  Node 0 is the dummy root.  `dfs_order` lists nodes in
    depth-first preorder and `skip_index` maps each position to the first
    later position outside that node's subtree.

    Blocks are visited in ascending (gi, hi) order; within a block,
    children sort by (kind, indices).  Construction is eager below
    `LAZY_BLOCK_THRESHOLD` blocks and per-block lazy above it (guarded by
    a lock, so concurrent traversals are safe).
    """

    def __init__(self, groups, n_inputs, n_outputs, lazy=None):
        if not isinstance(groups, GroupStructure):
            raise TypeError("groups must be a GroupStructure")
        self.groups = groups
        self.n_inputs = n_inputs
        self.n_outputs = n_outputs
        self.block_order = [
            (gi, hi)
            for gi in range(len(groups.input_groups))
            for hi in range(len(groups.output_groups))
        ]
        self.kinds = [ROOT]
        self.a_idx = [-1]
        self.b_idx = [-1]
        self.children = [[]]
        self._key_to_node = {}
        # per-block DFS segments: (node ids in preorder, local skip offsets)
        self._segments = [None] * len(self.block_order)
        self._lock = threading.Lock()
        self._n_materialized = 0
        if lazy is None:
            lazy = len(self.block_order) > LAZY_BLOCK_THRESHOLD
        self.lazy = lazy
        if not lazy:
            for bi in range(len(self.block_order)):
                self._materialize(bi)

    # -- construction ------------------------------------------------------

    def _node(self, kind, a, b, discovered):
        key = (kind, a, b)
        node = self._key_to_node.get(key)
        if node is None:
            node = len(self.kinds)
            self._key_to_node[key] = node
            self.kinds.append(kind)
            self.a_idx.append(a)
            self.b_idx.append(b)
            self.children.append([])
            discovered.append(node)
        return node

    def _materialize(self, bi):
        """Build block bi's nodes, edges, and DFS segment (idempotent)."""
        if self._segments[bi] is not None:
            return self._segments[bi]
        with self._lock:
            if self._segments[bi] is not None:
                return self._segments[bi]
            # Lazy construction must still follow global DFS order: every
            # earlier block has to exist before this one discovers nodes.
            while self._n_materialized < bi:
                self._materialize_one(self._n_materialized)
            if self._segments[bi] is None:
                self._materialize_one(bi)
            return self._segments[bi]

    def _materialize_one(self, bi):
        gi, hi = self.block_order[bi]
        g = self.groups.input_groups[gi]
        h = self.groups.output_groups[hi]
        discovered = []
        block = self._node(BLOCK, gi, hi, discovered)
        self.children[ROOT].append(block)
        row_nodes = [self._node(ROW, k, gi, discovered) for k in h]
        col_nodes = [self._node(COL, j, hi, discovered) for j in g]
        self.children[block] = row_nodes + col_nodes
        # A row/col node shared with an earlier block already carries its
        # entry edges; only nodes created by this block get children here.
        created = set(discovered)
        for k, rnode in zip(h, row_nodes):
            if rnode in created:
                self.children[rnode] = [
                    self._node(ENTRY, k, j, discovered) for j in g
                ]
        for j, cnode in zip(g, col_nodes):
            if cnode in created:
                self.children[cnode] = [
                    self._node(ENTRY, k, j, discovered) for k in h
                ]
        # Preorder DFS restricted to nodes first discovered by this block;
        # nodes owned by earlier blocks already sit in earlier segments.
        owned = set(discovered)
        order = []
        skip = []
        def visit(node):
            pos = len(order)
            order.append(node)
            skip.append(None)
            owned.discard(node)
            for child in self.children[node]:
                if child in owned:
                    visit(child)
            skip[pos] = len(order)
        visit(block)
        seg = (order, skip)
        self._segments[bi] = seg
        self._n_materialized += 1
        return seg

    # -- views -------------------------------------------------------------

    @property
    def n_nodes(self):
        self._materialize_all()
        return len(self.kinds)

    def _materialize_all(self):
        if self._n_materialized < len(self.block_order):
            for bi in range(len(self.block_order)):
                self._materialize(bi)

    @property
    def dfs_order(self):
        """Node ids in global DFS preorder (dummy root first)."""
        self._materialize_all()
        order = [ROOT]
        for seg in self._segments:
            order.extend(seg[0])
        return order

    @property
    def skip_index(self):
        """For each DFS position, the next position outside its subtree."""
        self._materialize_all()
        skip = [1 + sum(len(seg[0]) for seg in self._segments)]
        offset = 1
        for seg in self._segments:
            skip.extend(offset + s for s in seg[1])
            offset += len(seg[0])
        return skip

    def node_kind(self, node):
        return _KIND_NAMES[self.kinds[node]]

    def zero_set(self, node):
        """Coefficient positions (k, j) zeroed by this node's pattern."""
        kind = self.kinds[node]
        a, b = self.a_idx[node], self.b_idx[node]
        if kind == BLOCK:
            g = self.groups.input_groups[a]
            h = self.groups.output_groups[b]
            return frozenset((k, j) for k in h for j in g)
        if kind == ROW:
            return frozenset((a, j) for j in self.groups.input_groups[b])
        if kind == COL:
            return frozenset((k, a) for k in self.groups.output_groups[b])
        if kind == ENTRY:
            return frozenset([(a, b)])
        raise ValueError("dummy root has no zero set")

    def edges(self):
        """All (parent, child) pairs, dummy-root edges included."""
        self._materialize_all()
        return [(p, c) for p in range(len(self.children)) for c in self.children[p]]

    def to_dot(self, max_nodes=500):
        """GraphViz DOT dump for eyeballing small DAGs."""
        self._materialize_all()
        if len(self.kinds) > max_nodes:
            raise ValueError("DAG too large to dump (%d nodes)" % len(self.kinds))
        label = {ROOT: lambda a, b: "root",
                 BLOCK: lambda a, b: "B[g%d,h%d]" % (a, b),
                 ROW: lambda a, b: "row k=%d,g%d" % (a, b),
                 COL: lambda a, b: "col j=%d,h%d" % (a, b),
                 ENTRY: lambda a, b: "(%d,%d)" % (a, b)}
        lines = ["digraph zero_patterns {"]
        for i, kind in enumerate(self.kinds):
            lines.append('  n%d [label="%s"];' % (i, label[kind](self.a_idx[i], self.b_idx[i])))
        for p, c in self.edges():
            lines.append("  n%d -> n%d;" % (p, c))
        lines.append("}")
        return "\n".join(lines)


def build_dag(gs, n_inputs, n_outputs, lazy=None):
    """Build the zero-pattern DAG for a group structure.

    Inputs or outputs not covered by any group are wrapped in singleton
    groups first, so every coefficient belongs to at least one block.
    """
    completed = gs.with_singletons(n_inputs, n_outputs)
    return PatternDag(completed, n_inputs, n_outputs, lazy=lazy)


def traverse_with_skip(dag, is_zeroed):
    """Yield non-root nodes in DFS order, pruning zeroed subtrees.

    `is_zeroed(node)` is evaluated at visit time; when it returns True the
    node's descendants are skipped (they are contained in its pattern, so
    they are zero as well).
    """
    for bi in range(len(dag.block_order)):
        order, skip = dag._materialize(bi)
        t = 0
        n = len(order)
        while t < n:
            node = order[t]
            yield node
            t = skip[t] if is_zeroed(node) else t + 1
