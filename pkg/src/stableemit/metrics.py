"""Token emission latency statistics and token-level error accounting.

Hypothesis and reference token sequences are aligned by a minimal-edit
Levenshtein backtrace that maximizes matches among cost-optimal alignments
(so substitution/insertion/deletion counts are canonical and symmetric up
to swapping insertions with deletions). Emission latency is measured on
matched positions only; substituted tokens keep their timing slot, deleted
reference tokens are counted separately.
"""

import json
from dataclasses import dataclass, field
from typing import List, Optional

TIMING_BASIS = "matched-and-substituted-tokens"


@dataclass
class ErrorReport:
    substitutions: int
    insertions: int
    deletions: int
    matches: int
    n_reference: int

    @property
    def rate(self):
        n = max(self.n_reference, 1)
        return (self.substitutions + self.insertions + self.deletions) / n

    def to_dict(self):
        return {
            "substitutions": self.substitutions,
            "insertions": self.insertions,
            "deletions": self.deletions,
            "matches": self.matches,
            "n_reference": self.n_reference,
            "rate": self.rate,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class LatencyReport:
    latencies_ms: List[float]
    percentiles: dict
    deletions: int
    n_reference: int
    timing_basis: str = TIMING_BASIS

    def to_dict(self):
        return {
            "latencies_ms": list(self.latencies_ms),
            "percentiles": {str(k): v for k, v in self.percentiles.items()},
            "deletions": self.deletions,
            "n_reference": self.n_reference,
            "timing_basis": self.timing_basis,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def percentile(values, q):
    """Nearest-rank percentile: element ceil(q/100 * n) of the sorted list."""
    if not values:
        raise ValueError("percentile of an empty list")
    if not 0 < q <= 100:
        raise ValueError(f"percentile rank must be in (0, 100], got {q}")
    ordered = sorted(values)
    rank = -(-q * len(ordered) // 100)  # ceil without floats
    return ordered[int(rank) - 1]


def align_tokens(hyp, ref):
    """Canonical minimal-edit alignment as a list of ops.

    Ops are ("match"|"sub", hyp_idx, ref_idx), ("del", None, ref_idx),
    ("ins", hyp_idx, None) with 0-based indices. Cost is lexicographic
    (edit distance, -matches); backtrace ties prefer
    match > substitution > deletion > insertion.
    """
    n_hyp, n_ref = len(hyp), len(ref)
    INF = (1 << 30, 0)
    # dp[i][k] = (distance, -matches) aligning hyp[:i] with ref[:k]
    dp = [[INF] * (n_ref + 1) for _ in range(n_hyp + 1)]
    dp[0][0] = (0, 0)
    for i in range(n_hyp + 1):
        for k in range(n_ref + 1):
            if i == 0 and k == 0:
                continue
            best = INF
            if i > 0 and k > 0:
                d, m = dp[i - 1][k - 1]
                if hyp[i - 1] == ref[k - 1]:
                    best = min(best, (d, m - 1))
                else:
                    best = min(best, (d + 1, m))
            if k > 0:
                d, m = dp[i][k - 1]
                best = min(best, (d + 1, m))
            if i > 0:
                d, m = dp[i - 1][k]
                best = min(best, (d + 1, m))
            dp[i][k] = best

    ops = []
    i, k = n_hyp, n_ref
    while i > 0 or k > 0:
        here = dp[i][k]
        if i > 0 and k > 0 and hyp[i - 1] == ref[k - 1] \
                and dp[i - 1][k - 1] == (here[0], here[1] + 1):
            ops.append(("match", i - 1, k - 1))
            i, k = i - 1, k - 1
        elif i > 0 and k > 0 and hyp[i - 1] != ref[k - 1] \
                and dp[i - 1][k - 1] == (here[0] - 1, here[1]):
            ops.append(("sub", i - 1, k - 1))
            i, k = i - 1, k - 1
        elif k > 0 and dp[i][k - 1] == (here[0] - 1, here[1]):
            ops.append(("del", None, k - 1))
            k -= 1
        else:
            ops.append(("ins", i - 1, None))
            i -= 1
    ops.reverse()
    return ops


def token_error_rate(hyp, ref):
    """Substitution/insertion/deletion counts from the canonical alignment."""
    counts = {"match": 0, "sub": 0, "del": 0, "ins": 0}
    for op, _, _ in align_tokens(hyp, ref):
        counts[op] += 1
    return ErrorReport(
        substitutions=counts["sub"], insertions=counts["ins"],
        deletions=counts["del"], matches=counts["match"],
        n_reference=len(ref))


def tel(emissions, reference, alignment):
    """Token emission latency on aligned positions.

    ``emissions`` are the decoder's records in output order (one per
    hypothesis token), ``reference`` a ground-truth BoundarySequence, and
    ``alignment`` the op list from :func:`align_tokens` between the decoded
    tokens and the reference tokens. Latency of an aligned pair is
    (emission_frame - reference_boundary) * frame_ms; it can be negative
    for early emissions. Deleted reference tokens contribute to the
    deletion count instead.
    """
    frame_ms = reference.frame_ms
    if frame_ms <= 0:
        raise ValueError("frame_ms must be positive")
    latencies = []
    deletions = 0
    for op, hyp_idx, ref_idx in alignment:
        if op in ("match", "sub"):
            emission = emissions[hyp_idx]
            boundary = reference.boundaries[ref_idx]
            latencies.append((emission.frame - boundary) * frame_ms)
        elif op == "del":
            deletions += 1
    return LatencyReport(
        latencies_ms=latencies,
        percentiles=summarize_percentiles(latencies),
        deletions=deletions,
        n_reference=len(reference.boundaries),
    )


def summarize_percentiles(values, ranks=(50, 90, 95)):
    if not values:
        return {q: None for q in ranks}
    return {q: percentile(values, q) for q in ranks}


def merge_latency_reports(reports):
    """Pool per-utterance latencies into one corpus-level report."""
    latencies = [x for r in reports for x in r.latencies_ms]
    return LatencyReport(
        latencies_ms=latencies,
        percentiles=summarize_percentiles(latencies),
        deletions=sum(r.deletions for r in reports),
        n_reference=sum(r.n_reference for r in reports),
    )


def merge_error_reports(reports):
    return ErrorReport(
        substitutions=sum(r.substitutions for r in reports),
        insertions=sum(r.insertions for r in reports),
        deletions=sum(r.deletions for r in reports),
        matches=sum(r.matches for r in reports),
        n_reference=sum(r.n_reference for r in reports),
    )
