"""User-study aggregation: first-place preference and rank-weighted scores."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

ASPECTS = ("identity", "quality", "preservation")


class StudyError(ValueError):
    pass


@dataclass(frozen=True)
class StudyResponse:
    respondent_id: str
    aspect: str
    ranking: tuple  # method ids, best first


def rank_weight(rank: int, n_methods: int, weighting: str = "linear") -> float:
    """Weight of a 1-based rank.  ``linear``: M - r + 1; ``inverse``: M / r."""
    if weighting == "linear":
        return float(n_methods - rank + 1)
    if weighting == "inverse":
        return n_methods / rank
    raise StudyError(f"unknown weighting {weighting!r}")


def human_scores(responses, methods, weighting: str = "linear"):
    """Aggregate rankings per aspect.

    Returns ``(preference, scores)``, both ``{aspect: {method: value}}``:
    preference is the percentage of responses ranking the method first, and
    score is S = sum_r f_r * W(r) / N with f_r the number of responses
    putting the method at rank r and N the responses for that aspect.
    """
    methods = list(methods)
    m = len(methods)
    counts = defaultdict(lambda: defaultdict(lambda: defaultdict(int)))  # aspect -> method -> rank -> f
    n = defaultdict(int)
    for resp in responses:
        if resp.aspect not in ASPECTS:
            raise StudyError(f"unknown aspect {resp.aspect!r}")
        if sorted(resp.ranking) != sorted(methods) or len(set(resp.ranking)) != m:
            raise StudyError(f"response {resp.respondent_id}: ranking is not a complete permutation of {methods}")
        n[resp.aspect] += 1
        for r, meth in enumerate(resp.ranking, start=1):
            counts[resp.aspect][meth][r] += 1

    preference, scores = {}, {}
    for aspect in ASPECTS:
        if not n[aspect]:
            continue
        N = n[aspect]
        preference[aspect] = {me: 100.0 * counts[aspect][me][1] / N for me in methods}
        scores[aspect] = {
            me: sum(f * rank_weight(r, m, weighting) for r, f in counts[aspect][me].items()) / N
            for me in methods
        }
    return preference, scores
