"""Answer-scoring metrics: token-level F1 and BLEU-1.

Both share one tokenizer: lowercase, ASCII punctuation mapped to spaces,
split on whitespace. The preprocessing is deliberately simple and documented
so scores are comparable run to run.
"""

from __future__ import annotations

import math
import string
from collections import Counter

_PUNCT_TABLE = str.maketrans({ch: " " for ch in string.punctuation})


def tokenize(text: str) -> list[str]:
    return text.lower().translate(_PUNCT_TABLE).split()


def token_f1(prediction: str, gold: str) -> float:
    """F1 over multiset token overlap; empty-vs-empty scores 1, empty-vs-any 0."""
    pred_tokens = tokenize(prediction)
    gold_tokens = tokenize(gold)
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def bleu1(prediction: str, gold: str) -> float:
    """Clipped unigram precision times the brevity penalty exp(1 - r/c)."""
    pred_tokens = tokenize(prediction)
    gold_tokens = tokenize(gold)
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    clipped = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    precision = clipped / len(pred_tokens)
    c, r = len(pred_tokens), len(gold_tokens)
    brevity = 1.0 if c >= r else math.exp(1.0 - r / c)
    return precision * brevity
