"""Input checks for the estimator API."""

from sklearn.exceptions import NotFittedError  # noqa: F401  (re-exported)
from sklearn.utils.validation import check_is_fitted  # noqa: F401

from .data import MIN_SOURCE_LENGTH


def check_sentences(X, min_len=1, name="X"):
    """Normalise a sequence of sentences to token lists.

    Each sentence is either a whitespace-separated string or a sequence of
    string tokens. Returns ``(token_lists, was_text)``.
    """
    if isinstance(X, str):
        raise TypeError(f"{name} must be a sequence of sentences, not a single string")
    try:
        items = list(X)
    except TypeError:
        raise TypeError(f"{name} must be an iterable of sentences") from None
    if not items:
        raise ValueError(f"{name} is empty")
    was_text = isinstance(items[0], str)
    out = []
    for i, sent in enumerate(items):
        if isinstance(sent, str) != was_text:
            raise TypeError(f"{name} mixes strings and token lists (item {i})")
        tokens = sent.split() if was_text else [str(t) for t in sent]
        if len(tokens) < min_len:
            raise ValueError(f"{name}[{i}] has {len(tokens)} tokens; need at least {min_len}")
        out.append(tokens)
    return out, was_text


def check_parallel(X, y):
    src, was_text = check_sentences(X, MIN_SOURCE_LENGTH, "X")
    tgt, _ = check_sentences(y, 1, "y")
    if len(src) != len(tgt):
        raise ValueError(f"X has {len(src)} sentences but y has {len(tgt)}")
    return src, tgt, was_text
