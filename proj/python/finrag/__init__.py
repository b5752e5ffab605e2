"""Python access to the finrag core library."""

import json

from . import _finrag
from ._finrag import (
    Error,
    FormatError,
    InvalidArgument,
    KnowledgeBase,
    MemoryBank,
    NotFound,
    RerankModel,
    contrastive_loss,
    cosine,
    embed,
    evaluate,
    sigmoid,
    subseq_similarity,
    write_synthetic,
)

__version__ = _finrag.version()


def estimate_cost(n, t=0):
    return json.loads(_finrag.estimate_cost(n, t))


def lookup(bank, question, period=None):
    """Verified bank answer as a dict, or None."""
    hit = bank.lookup(question, period)
    return None if hit is None else json.loads(hit)


class Pipeline:
    """answer_query over a knowledge base with a mock or scripted gateway."""

    def __init__(self, kb, bank=None, tools="", model="", mock_script="", jobs=4, schedule_seed=None):
        self._p = _finrag.Pipeline(kb, bank, str(tools), str(model), str(mock_script), jobs, schedule_seed)
        self.history = []

    def answer(self, text, keep_history=True):
        result = json.loads(self._p.answer(text, self.history))
        if keep_history:
            self.history += [("user", text), ("assistant", result["answer"])]
        return result


__all__ = [
    "Error", "FormatError", "InvalidArgument", "KnowledgeBase", "MemoryBank", "NotFound", "Pipeline",
    "RerankModel", "contrastive_loss", "cosine", "embed", "estimate_cost", "evaluate", "lookup", "sigmoid",
    "subseq_similarity", "write_synthetic",
]
