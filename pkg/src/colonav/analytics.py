"""Session-log measures and the nonparametric comparison pipeline.

The pipeline is nonparametric by construction (Friedman across techniques,
Wilcoxon signed-rank post-hocs under a Bonferroni-corrected threshold);
there is deliberately no normality gate. Small designs take an exact
permutation/enumeration route, larger ones the classical chi-square /
normal approximations with tie corrections.
"""
from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2 as chi2_dist
from scipy.stats import norm, rankdata

FRIEDMAN_EXACT_LIMIT = 500_000   # max (k!)^n assignments to enumerate
WILCOXON_EXACT_N = 12


class AnalyticsError(Exception):
    pass


# ------------------------------------------------------------- measures

@dataclass
class SessionLog:
    subject: str
    technique: str
    events: list[dict]
    marker_set: str = ""

    @classmethod
    def from_events(cls, events: list[dict]):
        if not events:
            raise AnalyticsError("empty session log")
        times = [e["t"] for e in events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise AnalyticsError("event timestamps not non-decreasing")
        start = next((e for e in events if e["kind"] == "start"), None)
        if start is None:
            raise AnalyticsError("log has no start event")
        p = start["payload"]
        return cls(p.get("subject", "?"), p.get("technique", "?"),
                   events, p.get("marker_set", ""))

    @classmethod
    def from_text(cls, text: str):
        events = [json.loads(ln) for ln in text.splitlines() if ln.strip()]
        return cls.from_events(events)


def tagged_marker_ids(log: SessionLog) -> list[str]:
    out = []
    for e in log.events:
        if e["kind"] == "tag" and e["payload"].get("marker") is not None:
            out.append(e["payload"]["marker"])
    return out


def success_rate(log: SessionLog, markers) -> float:
    """Percent of distinct markers tagged; duplicates count once."""
    known = {m.id if hasattr(m, "id") else m for m in markers}
    if not known:
        raise AnalyticsError("empty marker set")
    tags = tagged_marker_ids(log)
    unknown = [t for t in tags if t not in known]
    if unknown:
        raise AnalyticsError(f"log tags unknown marker id(s): {unknown[:5]}")
    return 100.0 * len(set(tags)) / len(known)


def completion_time(log: SessionLog) -> float:
    start = next((e for e in log.events if e["kind"] == "start"), None)
    end = next((e for e in log.events if e["kind"] == "end"), None)
    if start is None or end is None:
        raise AnalyticsError("log missing start or end event")
    return float(end["t"]) - float(start["t"])


@dataclass
class StudyTable:
    """Complete subjects x techniques table of one scalar measure."""
    values: np.ndarray
    subjects: list[str]
    techniques: list[str]
    measure: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise AnalyticsError("table must be 2-D")
        n, k = self.values.shape
        if n < 2 or k < 2:
            raise AnalyticsError("need >= 2 subjects and >= 2 techniques")
        if not np.all(np.isfinite(self.values)):
            raise AnalyticsError(f"incomplete table for {self.measure!r}")


# -------------------------------------------------------------- friedman

@dataclass
class FriedmanResult:
    chi2: float
    df: int
    p: float
    exact: bool
    n: int
    k: int

    def __str__(self):
        return format_friedman(self.chi2, self.df, self.p)


def _friedman_chi2(ranks: np.ndarray) -> float:
    """Tie-corrected Friedman statistic from per-row mid-ranks."""
    n, k = ranks.shape
    col = ranks.sum(axis=0)
    raw = 12.0 / (n * k * (k + 1)) * float((col ** 2).sum()) \
        - 3.0 * n * (k + 1)
    ties = 0.0
    for row in ranks:
        _, counts = np.unique(row, return_counts=True)
        ties += float((counts ** 3 - counts).sum())
    c = 1.0 - ties / (k * (k * k - 1) * n)
    if c <= 0.0:
        return 0.0  # all rows fully tied: no rank variation at all
    return raw / c


def friedman(table: StudyTable | np.ndarray,
             exact: bool | None = None) -> FriedmanResult:
    """Friedman test over a complete subjects x treatments table.

    exact=None enumerates all (k!)^n within-row rank assignments when that
    count is small enough, else falls back to the chi-square upper tail
    with df = k-1. The exact p is the fraction of assignments whose
    statistic reaches the observed one.
    """
    values = table.values if isinstance(table, StudyTable) else \
        np.asarray(table, dtype=np.float64)
    if values.ndim != 2:
        raise AnalyticsError("need a 2-D table")
    n, k = values.shape
    if n < 2 or k < 2:
        raise AnalyticsError("need >= 2 rows and >= 2 columns")
    if not np.all(np.isfinite(values)):
        raise AnalyticsError("incomplete table")
    ranks = np.apply_along_axis(rankdata, 1, values)
    observed = _friedman_chi2(ranks)
    df = k - 1

    total = math.factorial(k) ** n
    if exact is None:
        exact = total <= FRIEDMAN_EXACT_LIMIT
    if exact and total > 50_000_000:
        raise AnalyticsError(f"exact Friedman infeasible for {total} "
                             "assignments")
    if exact:
        p = _friedman_exact_p(ranks, observed)
    else:
        p = float(chi2_dist.sf(observed, df))
    return FriedmanResult(observed, df, min(p, 1.0), exact, n, k)


def _friedman_exact_p(ranks: np.ndarray, observed: float) -> float:
    n, k = ranks.shape
    row_perms = []
    for row in ranks:
        perms = np.array([p for p in itertools.permutations(row)])
        row_perms.append(perms)
    sums = np.zeros((1, k))
    for perms in row_perms:
        sums = (sums[:, None, :] + perms[None, :, :]).reshape(-1, k)
    total = len(sums)
    nk = n * k
    raw = 12.0 / (nk * (k + 1)) * (sums ** 2).sum(axis=1) \
        - 3.0 * n * (k + 1)
    ties = 0.0
    for row in ranks:
        _, counts = np.unique(row, return_counts=True)
        ties += float((counts ** 3 - counts).sum())
    c = 1.0 - ties / (k * (k * k - 1) * n)
    stats = np.zeros(total) if c <= 0.0 else raw / c
    count = int((stats >= observed - 1e-9).sum())
    return count / total


# -------------------------------------------------------------- wilcoxon

@dataclass
class WilcoxonResult:
    w: float          # min(W+, W-)
    w_plus: float
    w_minus: float
    n: int            # non-zero differences
    p: float
    z: float | None   # None on the exact route
    exact: bool

    def __str__(self):
        if self.z is None:
            return f"W={self.w:g}, exact p={self.p:.3f}"
        return format_wilcoxon(self.z, self.p)


def wilcoxon_signed_rank(a, b) -> WilcoxonResult:
    """Two-sided paired test; zero differences dropped, mid-ranks on |d|.

    n <= 12 enumerates all 2^n sign assignments exactly; larger n uses the
    normal approximation with tie-corrected variance and a continuity
    correction, reported SPSS-style with the Z of the smaller rank sum.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise AnalyticsError("paired vectors must be equal-length 1-D")
    if len(a) < 2:
        raise AnalyticsError("need at least 2 pairs")
    d = a - b
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        warnings.warn("all differences are zero; p = 1")
        return WilcoxonResult(0.0, 0.0, 0.0, 0, 1.0, None, True)
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    mu = 0.5 * float(ranks.sum())

    if n <= WILCOXON_EXACT_N:
        signs = np.array(list(itertools.product((0.0, 1.0), repeat=n)))
        sums = signs @ ranks
        obs_dev = abs(w_plus - mu)
        count = int((np.abs(sums - mu) >= obs_dev - 1e-12).sum())
        p = count / len(signs)
        return WilcoxonResult(w, w_plus, w_minus, n, min(p, 1.0), None,
                              True)

    sigma = math.sqrt(float((ranks ** 2).sum()) / 4.0)
    if sigma == 0.0:
        return WilcoxonResult(w, w_plus, w_minus, n, 1.0, 0.0, False)
    z = (w - mu + 0.5) / sigma  # w <= mu, so z <= 0 and cc shrinks |z|
    p = min(1.0, 2.0 * float(norm.cdf(z)))
    return WilcoxonResult(w, w_plus, w_minus, n, p, z, False)


def bonferroni(alpha: float, m: int) -> float:
    """Corrected per-comparison threshold alpha/m (unrounded; report
    formatting rounds to 3 decimals)."""
    if m < 1:
        raise AnalyticsError("m must be >= 1")
    if alpha < 0:
        raise AnalyticsError("alpha must be >= 0")
    return alpha / m


# ----------------------------------------------------------- latin square

def latin_square(k: int) -> list[list[int]]:
    """Balanced condition ordering.

    Even k: the classic k x k square (first row 0, 1, k-1, 2, k-2, ...,
    next rows shifted) where every ordered adjacency occurs exactly once.
    Odd k: that square plus its row-reversal, 2k rows, every ordered
    adjacency exactly twice.
    """
    if k < 2:
        raise AnalyticsError("need k >= 2 conditions")
    first = [0, 1]
    lo, hi = 2, k - 1
    while len(first) < k:
        first.append(hi)
        hi -= 1
        if len(first) < k:
            first.append(lo)
            lo += 1
    rows = [[(c + r) % k for c in first] for r in range(k)]
    if k % 2 == 1:
        rows += [list(reversed(r)) for r in rows]
    return rows


# ------------------------------------------------------------ formatting

def format_friedman(chi2: float, df: int, p: float) -> str:
    return f"χ²({df})={chi2:.3f}, p={p:.3f}"


def format_wilcoxon(z: float, p: float) -> str:
    return f"Z={z:.3f}, p={p:.3f}"


def format_threshold(threshold: float) -> str:
    return f"p≤{threshold:.3f}"


# --------------------------------------------------------------- reports

BOUNDARY_MARGIN = 0.005


@dataclass
class PairwiseComparison:
    pair: tuple[str, str]
    result: WilcoxonResult
    threshold: float
    significant: bool
    boundary: bool

    def to_payload(self) -> dict:
        return {
            "pair": list(self.pair),
            "w": self.result.w,
            "z": self.result.z,
            "p": self.result.p,
            "exact": self.result.exact,
            "string": str(self.result),
            "threshold": round(self.threshold, 3),
            "significant": self.significant,
            "boundary": self.boundary,
        }


@dataclass
class MeasureReport:
    measure: str
    table: StudyTable
    friedman: FriedmanResult
    pairwise: list[PairwiseComparison] = field(default_factory=list)

    def to_payload(self) -> dict:
        return {
            "measure": self.measure,
            "subjects": self.table.subjects,
            "techniques": self.table.techniques,
            "values": self.table.values.tolist(),
            "friedman": {
                "chi2": self.friedman.chi2,
                "df": self.friedman.df,
                "p": self.friedman.p,
                "exact": self.friedman.exact,
                "string": str(self.friedman),
            },
            "pairwise": [c.to_payload() for c in self.pairwise],
        }


def compare_measure(table: StudyTable, alpha: float = 0.05) -> MeasureReport:
    """Friedman omnibus plus all pairwise Wilcoxon post-hocs under the
    Bonferroni-corrected threshold. Comparisons whose p lands within
    0.005 above the threshold are flagged as boundary cases instead of
    being silently called non-significant."""
    fr = friedman(table)
    pairs = list(itertools.combinations(range(len(table.techniques)), 2))
    thr = bonferroni(alpha, len(pairs)) if pairs else alpha
    thr3 = round(thr, 3)
    comparisons = []
    for i, j in pairs:
        res = wilcoxon_signed_rank(table.values[:, i], table.values[:, j])
        significant = res.p <= thr3
        boundary = (not significant) and (res.p <= thr3 + BOUNDARY_MARGIN)
        comparisons.append(PairwiseComparison(
            (table.techniques[i], table.techniques[j]), res, thr,
            significant, boundary))
    return MeasureReport(table.measure, table, fr, comparisons)


def build_tables(logs: list[SessionLog], markers) -> dict[str, StudyTable]:
    """Assemble complete subjects x techniques tables for both measures."""
    subjects = sorted({lg.subject for lg in logs})
    techniques = sorted({lg.technique for lg in logs})
    by_key = {}
    for lg in logs:
        key = (lg.subject, lg.technique)
        if key in by_key:
            raise AnalyticsError(f"duplicate log for {key}")
        by_key[key] = lg
    shape = (len(subjects), len(techniques))
    succ = np.full(shape, np.nan)
    time = np.full(shape, np.nan)
    for i, subj in enumerate(subjects):
        for j, tech in enumerate(techniques):
            lg = by_key.get((subj, tech))
            if lg is None:
                raise AnalyticsError(
                    f"missing session for subject {subj!r} "
                    f"technique {tech!r}")
            succ[i, j] = success_rate(lg, markers)
            time[i, j] = completion_time(lg)
    return {
        "success_rate": StudyTable(succ, subjects, techniques,
                                   "success_rate"),
        "completion_time": StudyTable(time, subjects, techniques,
                                      "completion_time"),
    }


def analyze_sessions(logs: list[SessionLog], markers,
                     alpha: float = 0.05) -> dict:
    """Full report: per-session measures plus the statistics battery."""
    sessions = [{
        "subject": lg.subject,
        "technique": lg.technique,
        "success_rate": success_rate(lg, markers),
        "completion_time": completion_time(lg),
        "tags": len(tagged_marker_ids(lg)),
    } for lg in logs]
    report = {"sessions": sessions, "measures": {}}
    if len({(s["subject"], s["technique"]) for s in sessions}) >= 4:
        try:
            tables = build_tables(logs, markers)
        except AnalyticsError:
            tables = {}
        for name, table in tables.items():
            report["measures"][name] = compare_measure(table,
                                                       alpha).to_payload()
    return report
