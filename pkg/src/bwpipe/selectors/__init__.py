"""Twelve supervised feature selectors and their consensus ranking."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import DataError
from .bart import bart_select
from .base import SelectorConfig, SelectorReport, make_report, prepare, rank_order
from .filters import (
    anova_f_rank,
    inmifs_select,
    kendall_rank,
    kendall_tau_b,
    mutual_info,
    mutual_info_rank,
    pearson_rank,
)
from .mars import mars_fit, mars_select
from .wrappers import forward_select, lasso_select, rfe_select, ridge_rank, tree_importance_rank

SELECTORS = {
    "pearson": pearson_rank,
    "anova": anova_f_rank,
    "mutual_info": mutual_info_rank,
    "kendall": kendall_rank,
    "inmifs": inmifs_select,
    "forward": forward_select,
    "rfe": rfe_select,
    "lasso": lasso_select,
    "ridge": ridge_rank,
    "decision_tree": tree_importance_rank,
    "mars": mars_select,
    "bart": bart_select,
}
SELECTOR_NAMES = tuple(SELECTORS)
FAMILY = {
    "pearson": "filter", "anova": "filter", "mutual_info": "filter", "kendall": "filter",
    "inmifs": "filter", "forward": "wrapper", "rfe": "wrapper", "lasso": "embedded",
    "ridge": "embedded", "decision_tree": "embedded", "mars": "embedded", "bart": "embedded",
}


def run_selector(name, X, y, config=SelectorConfig(), feature_names=None) -> SelectorReport:
    try:
        fn = SELECTORS[name]
    except KeyError:
        raise DataError(f"unknown selector {name!r}; choose from {', '.join(SELECTOR_NAMES)}") from None
    return fn(X, y, config, feature_names)


@dataclass
class ConsensusReport:
    entries: list  # [(feature, frequency, borda)], best first
    n_reports: int
    top_k: int
    selectors: list = field(default_factory=list)

    def top(self, k=None):
        k = self.top_k if k is None else k
        return [f for f, _, _ in self.entries[:k]]

    def frequency(self, feature):
        for f, freq, _ in self.entries:
            if f == feature:
                return freq
        return 0

    def to_dict(self):
        return {
            "n_reports": self.n_reports,
            "top_k": self.top_k,
            "selectors": self.selectors,
            "entries": [{"feature": f, "frequency": fr, "borda": b} for f, fr, b in self.entries],
        }


def consensus_rank(reports, top_k=20) -> ConsensusReport:
    """Aggregate top-K lists by frequency, then Borda points (top_k - 0-based rank),
    then column index."""
    if not reports:
        raise DataError("consensus_rank needs at least one report")
    columns = []
    seen = set()
    for rep in reports:
        for c in list(rep.columns) + rep.names:
            if c not in seen:
                seen.add(c)
                columns.append(c)
    pos = {c: i for i, c in enumerate(columns)}
    freq = dict.fromkeys(columns, 0)
    borda = dict.fromkeys(columns, 0)
    for rep in reports:
        for rank, name in enumerate(rep.names[:top_k]):
            freq[name] += 1
            borda[name] += top_k - rank
    present = [c for c in columns if freq[c] > 0]
    present.sort(key=lambda c: (-freq[c], -borda[c], pos[c]))
    return ConsensusReport([(c, freq[c], borda[c]) for c in present], len(reports), top_k,
                           [r.selector_name for r in reports])


def frequency_table(reports, features=None, top_k=20):
    """Rows ``(feature, selector-membership flags..., count)`` for the consensus CSV."""
    cons = consensus_rank(reports, top_k)
    feats = cons.top(len(cons.entries)) if features is None else list(features)
    rows = []
    for f in feats:
        flags = [int(f in r.names[:top_k]) for r in reports]
        rows.append((f, *flags, sum(flags)))
    header = ("feature", *[r.selector_name for r in reports], "count")
    return header, rows


__all__ = [
    "SelectorConfig",
    "SelectorReport",
    "ConsensusReport",
    "SELECTORS",
    "SELECTOR_NAMES",
    "run_selector",
    "consensus_rank",
    "frequency_table",
    "pearson_rank",
    "anova_f_rank",
    "mutual_info_rank",
    "kendall_rank",
    "inmifs_select",
    "forward_select",
    "rfe_select",
    "lasso_select",
    "ridge_rank",
    "tree_importance_rank",
    "mars_select",
    "mars_fit",
    "bart_select",
    "kendall_tau_b",
    "mutual_info",
    "make_report",
    "prepare",
    "rank_order",
]
