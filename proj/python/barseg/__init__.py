"""Bar-level music structure analysis with single-song autoencoders."""

import json

from ._barseg import (
    BarsegError,
    analyze,
    autosimilarity,
    dp_segment,
    feature,
    hit_rate,
    kernel,
    load_wav,
    write_synthetic_corpus,
)
from ._barseg import corpus as _corpus


def corpus(directory, **kwargs):
    """Run a corpus directory; returns the report as a dict."""
    return json.loads(_corpus(directory, **kwargs))


def corpus_json(directory, **kwargs):
    """Run a corpus directory; returns the report JSON text."""
    return _corpus(directory, **kwargs)


__all__ = [
    "BarsegError",
    "analyze",
    "autosimilarity",
    "corpus",
    "corpus_json",
    "dp_segment",
    "feature",
    "hit_rate",
    "kernel",
    "load_wav",
    "write_synthetic_corpus",
]
