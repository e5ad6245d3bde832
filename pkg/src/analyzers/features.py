"""
Feature-category analysis of BA and NWP top sets.

For one context and one annotation category, each subset (words only in the BA top set, only in
the NWP top set, in both) gets the percentage of the context's features of that category that
its words carry. A word with several features counts once per feature.
"""

from typing import Dict, Iterable, Optional

from ..errors import RejectedInputError
from ..stimulus.corpus import CATEGORIES, Corpus

SUBSETS = ("ba_only", "nwp_only", "both")


def feature_count(corpus: Corpus, words: Iterable[int], category: str) -> int:
    return sum(len(corpus.words[w].annotations.category(category)) for w in words)


def feature_percentages(
    corpus: Corpus,
    context_words: Iterable[int],
    ba_words: Iterable[int],
    nwp_words: Iterable[int],
    category: str
) -> Optional[Dict[str, float]]:
    """Percentages of the context's category features found in each top-set subset.

    Args:
        corpus: Annotated corpus
        context_words: Word indices of the context
        ba_words: BA top-set word indices
        nwp_words: NWP top-set word indices
        category: semantic, syntactic or discourse

    Returns:
        {"ba_only", "nwp_only", "both"} -> percent, or None when the context has no
        features of the category
    """
    if category not in CATEGORIES:
        raise RejectedInputError(f"Unknown annotation category {category!r}")
    total = feature_count(corpus, context_words, category)
    if total == 0:
        return None
    ba, nwp = set(ba_words), set(nwp_words)
    subsets = {"ba_only": ba - nwp, "nwp_only": nwp - ba, "both": ba & nwp}
    return {name: 100.0 * feature_count(corpus, subsets[name], category) / total for name in SUBSETS}
