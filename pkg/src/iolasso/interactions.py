"""Candidate-pair construction and design expansion for epistatic models.

The quadratic blow-up of an all-pairs interaction design is avoided by
admitting only pairs that are biologically plausible: SNP pairs whose
nearby genes interact in a genetic-interaction network, plus pairs that
pass a two-locus interaction screen.  Admitted pairs enter the design as
elementwise product rows; input groups for marginal SNPs and for pairs
come from network clusters, output groups from hierarchical clustering
of the traits.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage as scipy_linkage
from scipy.spatial.distance import squareform
from scipy.stats import f as f_dist

from .errors import InputError
from .model import Dataset, _standardize_rows_stats

DEFAULT_LINK_DISTANCE_BP = 500
DEFAULT_CORRELATION_FILTER = 0.5
DEFAULT_SCREEN_P_CUTOFF = 1e-5
DEFAULT_CLUSTER_CUTOFF = 0.8


@dataclass
class GenomePositions:
    """SNP point positions and gene intervals, both in base pairs."""

    snps: list  # (snp_id, chromosome, position)
    genes: list  # (gene_id, chromosome, start, end)

    def __post_init__(self):
        seen = set()
        for sid, _, pos in self.snps:
            if pos < 0:
                raise InputError("negative position for SNP %s" % sid)
            if sid in seen:
                raise InputError("duplicate SNP id %s" % sid)
            seen.add(sid)
        seen = set()
        for gid, _, start, end in self.genes:
            if start < 0 or start > end:
                raise InputError("bad interval for gene %s" % gid)
            if gid in seen:
                raise InputError("duplicate gene id %s" % gid)
            seen.add(gid)

    def snp_index(self):
        return {sid: i for i, (sid, _, _) in enumerate(self.snps)}


@dataclass
class InteractionNetwork:
    """Gene-gene interaction edges with significance, plus optional
    externally computed gene clusters."""

    edges: list  # (gene_a, gene_b, p_value)
    clusters: list | None = None  # list of sets of gene ids

    def __post_init__(self):
        for a, b, p in self.edges:
            if a == b:
                raise InputError("self-interaction %s-%s" % (a, b))
            if not 0.0 <= p <= 1.0:
                raise InputError("p-value out of range for %s-%s: %r" % (a, b, p))


@dataclass
class CandidatePairSet:
    """Unordered SNP index pairs admitted as interaction regressors.

    `provenance[(r, s)]` is "network", "screen", or "both".
    """

    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for r, s in self.provenance:
            if r >= s:
                raise InputError("pair must be ordered r < s, got (%d, %d)" % (r, s))

    @property
    def pairs(self):
        return sorted(self.provenance)

    def __len__(self):
        return len(self.provenance)

    def __contains__(self, pair):
        return tuple(pair) in self.provenance

    def merged_with(self, other):
        prov = dict(self.provenance)
        for pair, src in other.provenance.items():
            if pair in prov and prov[pair] != src:
                prov[pair] = "both"
            elif pair not in prov:
                prov[pair] = src
        return CandidatePairSet(prov)


def link_snps_to_genes(pos, max_dist_bp=DEFAULT_LINK_DISTANCE_BP):
    """Map each gene to the SNP indices within `max_dist_bp` of its interval.

    The distance from a SNP to a gene is 0 inside [start, end] and the gap
    to the nearer endpoint otherwise; linkage requires distance strictly
    below the cutoff.  SNPs on chromosomes absent from the gene table are
    rejected (they usually indicate mismatched label conventions).
    """
    gene_chroms = set(chrom for _, chrom, _, _ in pos.genes)
    offenders = [sid for sid, chrom, _ in pos.snps if chrom not in gene_chroms]
    if offenders:
        raise InputError(
            "SNPs on chromosomes unknown to the gene table: %s" % ", ".join(map(str, offenders))
        )
    by_chrom = {}
    for i, (_, chrom, p) in enumerate(pos.snps):
        by_chrom.setdefault(chrom, []).append((i, p))
    linkage = {}
    for gid, chrom, start, end in pos.genes:
        hits = set()
        for i, p in by_chrom.get(chrom, ()):
            dist = 0 if start <= p <= end else min(abs(p - start), abs(p - end))
            if dist < max_dist_bp:
                hits.add(i)
        linkage[gid] = hits
    return linkage


def candidate_pairs_from_network(net, link, p_cutoff, corr_filter=None, X=None):
    """Pairs of SNPs linked to the two endpoints of a significant edge.

    Edges need p_value strictly below `p_cutoff`.  When `corr_filter` is
    given, pairs whose genotype rows (from X) correlate more strongly
    than the cutoff in absolute value are discarded as trivial.
    """
    if corr_filter is not None and X is None:
        raise InputError("corr_filter requires the genotype matrix X")
    prov = {}
    for a, b, p in net.edges:
        if not p < p_cutoff:
            continue
        for r in link.get(a, ()):
            for s in link.get(b, ()):
                if r == s:
                    continue
                pair = (r, s) if r < s else (s, r)
                prov[pair] = "network"
    if corr_filter is not None:
        X = np.asarray(X, dtype=np.float64)
        for pair in list(prov):
            r, s = pair
            xr = X[r] - X[r].mean()
            xs = X[s] - X[s].mean()
            denom = np.linalg.norm(xr) * np.linalg.norm(xs)
            corr = 1.0 if denom == 0 else float(xr @ xs) / denom
            if abs(corr) > corr_filter:
                del prov[pair]
    return CandidatePairSet(prov)


def _interaction_p_value(y, xr, xs):
    """F-test p-value for the product term in y ~ xr + xs + xr*xs."""
    n = y.shape[0]
    null_design = np.column_stack([xr, xs])
    alt_design = np.column_stack([xr, xs, xr * xs])
    rss0 = float(np.sum((y - null_design @ np.linalg.lstsq(null_design, y, rcond=None)[0]) ** 2))
    rss1 = float(np.sum((y - alt_design @ np.linalg.lstsq(alt_design, y, rcond=None)[0]) ** 2))
    dof = n - 3
    if dof <= 0 or rss1 <= 0:
        return 0.0 if rss0 > rss1 else 1.0
    stat = max(rss0 - rss1, 0.0) / (rss1 / dof)
    return float(f_dist.sf(stat, 1, dof))


def two_locus_screen(ds, pairs, p_cutoff=DEFAULT_SCREEN_P_CUTOFF):
    """Keep candidate pairs whose interaction term is significant for at
    least one output (union over traits, so one design serves all).

    Pairs with perfectly collinear marginals are skipped with a warning.
    """
    X, Y = ds.X, ds.Y
    prov = {}
    for r, s in pairs:
        if r == s:
            continue
        pair = (r, s) if r < s else (s, r)
        xr, xs = X[pair[0]], X[pair[1]]
        denom = np.linalg.norm(xr) * np.linalg.norm(xs)
        if denom == 0 or abs(float(xr @ xs)) >= denom * (1 - 1e-12):
            warnings.warn("pair (%d, %d) skipped: collinear genotypes" % pair, RuntimeWarning)
            continue
        best = min(_interaction_p_value(Y[k], xr, xs) for k in range(Y.shape[0]))
        if best < p_cutoff:
            prov[pair] = "screen"
    return CandidatePairSet(prov)


def expand_design(ds, pair_set):
    """Append one product row per candidate pair and re-standardize.

    Products are computed on the raw (pre-standardization) genotype rows,
    so binary inputs yield logical-AND rows.  The returned dataset maps
    every column back to its origin via `column_map` and flags pair
    columns for the separate interaction L1 weight.
    """
    pairs = pair_set.pairs if isinstance(pair_set, CandidatePairSet) else sorted(
        tuple(p) for p in pair_set
    )
    raw = ds.raw_X if ds.raw_X is not None else ds.X
    rows = [raw]
    ids = list(ds.input_ids) if ds.input_ids is not None else [str(j + 1) for j in range(ds.n_inputs)]
    col_map = [("marginal", j) for j in range(ds.n_inputs)]
    new_ids = list(ids)
    for r, s in pairs:
        rows.append(raw[r] * raw[s])
        col_map.append(("pair", r, s))
        new_ids.append("%sx%s" % (ids[r], ids[s]))
    raw_expanded = np.vstack([rows[0]] + [row[None, :] for row in rows[1:]]) if pairs else raw.copy()
    raw_Y = ds.raw_Y if ds.raw_Y is not None else ds.Y
    out = Dataset.from_raw(raw_expanded, raw_Y,
                           sample_ids=ds.sample_ids, input_ids=new_ids,
                           output_ids=ds.output_ids)
    out.column_map = col_map
    pair_cols = np.zeros(out.n_inputs, dtype=bool)
    pair_cols[ds.n_inputs:] = True
    out.pair_columns = pair_cols
    return out


def build_input_groups_from_clusters(clusters, link, pair_set):
    """Groups of marginal SNPs and of candidate pairs per gene cluster.

    Cluster m yields the marginal group of all SNPs linked to any of its
    genes, and the pair group of all candidate pairs whose two endpoints
    are both linked to the cluster.  Empty groups are dropped.
    """
    if clusters is None:
        raise InputError("no gene clusters provided")
    pairs = pair_set.pairs if isinstance(pair_set, CandidatePairSet) else sorted(pair_set)
    marginal_groups = []
    pair_groups = []
    for cluster in clusters:
        snps = set()
        for gid in cluster:
            snps |= link.get(gid, set())
        if snps:
            marginal_groups.append(frozenset(snps))
        cluster_pairs = frozenset((r, s) for r, s in pairs if r in snps and s in snps)
        if cluster_pairs:
            pair_groups.append(cluster_pairs)
    return marginal_groups, pair_groups


def groups_on_expanded(expanded_ds, marginal_groups, pair_groups):
    """Translate marginal/pair groups into column groups of the expanded
    design (pair groups land on the product columns)."""
    if expanded_ds.column_map is None:
        raise InputError("dataset has no expansion column map")
    pair_col = {
        entry[1:]: j for j, entry in enumerate(expanded_ds.column_map) if entry[0] == "pair"
    }
    out = [tuple(sorted(g)) for g in marginal_groups]
    for pg in pair_groups:
        cols = tuple(sorted(pair_col[p] for p in pg if p in pair_col))
        if cols:
            out.append(cols)
    return out


def cluster_outputs(Y, cutoff=DEFAULT_CLUSTER_CUTOFF):
    """Group output rows by average-linkage clustering at 1 - correlation.

    Returns a list of index tuples covering every output; a single output
    is its own group.
    """
    Y = np.asarray(Y, dtype=np.float64)
    K = Y.shape[0]
    if K == 1:
        return [(0,)]
    std, _, _, const = _standardize_rows_stats(Y)
    corr = np.clip(std @ std.T, -1.0, 1.0)
    corr[const, :] = 0.0
    corr[:, const] = 0.0
    np.fill_diagonal(corr, 1.0)
    dist = 1.0 - corr
    np.fill_diagonal(dist, 0.0)
    z = scipy_linkage(squareform(dist, checks=False), method="average")
    labels = fcluster(z, t=cutoff, criterion="distance")
    groups = {}
    for k, lab in enumerate(labels):
        groups.setdefault(lab, []).append(k)
    return [tuple(v) for _, v in sorted(groups.items())]
