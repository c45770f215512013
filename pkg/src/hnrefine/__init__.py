"""Two-stage refinement of hard-negative training data for dense retrievers.

Training triplets often bury answer-bearing documents in their negative
sets. This package extracts an answer snippet for every candidate, ranks
the snippets listwise, and relabels or filters negatives by where they land
relative to the known positive, with full provenance of every decision.
"""

from .model import (
    NO_ANSWER,
    Action,
    AnswerSpan,
    Document,
    Mode,
    ModelError,
    RankingOutcome,
    Reason,
    RefinedInstance,
    RefinementDecision,
    Snippet,
    SnippetSet,
    TrainingInstance,
    candidate_set,
)

__version__ = "0.1.0"

__all__ = [
    "NO_ANSWER",
    "Action",
    "AnswerSpan",
    "Document",
    "Mode",
    "ModelError",
    "RankingOutcome",
    "Reason",
    "RefinedInstance",
    "RefinementDecision",
    "Snippet",
    "SnippetSet",
    "TrainingInstance",
    "candidate_set",
    "__version__",
]
