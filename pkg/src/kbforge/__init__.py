"""Topic-scoped knowledge materialization from language models.

Crawl factual triples into a knowledge base, measure how stable repeated
crawls are, ensemble runs into a consolidated KB, and export the result.
"""

from .model import (
    Caps,
    DegeneracyEvent,
    KnowledgeBase,
    RunConfig,
    RunRecord,
    StructuralCategory,
    Termination,
    TermKind,
    Triple,
    derive_categories,
    make_triple,
    normalize_label,
)

__version__ = "0.1.0"

__all__ = [
    "Caps",
    "DegeneracyEvent",
    "KnowledgeBase",
    "RunConfig",
    "RunRecord",
    "StructuralCategory",
    "Termination",
    "TermKind",
    "Triple",
    "derive_categories",
    "make_triple",
    "normalize_label",
    "__version__",
]
