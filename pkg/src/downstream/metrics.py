"""
Metrics - Corpus BLEU and ROUGE-L over token sequences
"""

import logging
from typing import Dict, Iterable, List, Sequence

from rouge_score import rouge_scorer
from sacrebleu.metrics import BLEU

from ..core.errors import DataFormatError

logger = logging.getLogger(__name__)

BLEU_ORDERS = (1, 2, 3, 4)


class WhitespaceTokenizer:
    """Split on whitespace only; token ids stay intact"""

    def tokenize(self, text: str) -> List[str]:
        return text.split()


def _as_text(tokens: Iterable) -> str:
    return " ".join(str(t) for t in tokens)


def text_gen_metrics(hypotheses: Sequence[Sequence], references: Sequence[Sequence]) -> Dict[str, float]:
    """
    Corpus BLEU-1..4 and mean ROUGE-L F-measure, all in [0, 1]

    BLEU uses uniform n-gram weights, the standard brevity penalty and no
    smoothing. Tokens are compared as given. Without smoothing BLEU-n is 0
    when no hypothesis has n tokens, even for exact matches: a corpus of
    3-token captions scores BLEU-4 = 0.

    Args:
        hypotheses: One token sequence per example
        references: One reference token sequence per example

    Returns:
        ``{"BLEU-1": ..., "BLEU-4": ..., "ROUGE-L": ...}``

    Raises:
        DataFormatError: If there are no references or the counts differ
    """
    if not references:
        raise DataFormatError("text_gen_metrics: empty reference set")
    if len(hypotheses) != len(references):
        raise DataFormatError(f"text_gen_metrics: {len(hypotheses)} hypotheses for {len(references)} references")
    hyp_text = [_as_text(h) for h in hypotheses]
    ref_text = [_as_text(r) for r in references]

    metrics = {}
    for order in BLEU_ORDERS:
        bleu = BLEU(max_ngram_order=order, smooth_method="none", tokenize="none")
        metrics[f"BLEU-{order}"] = bleu.corpus_score(hyp_text, [ref_text]).score / 100.0

    scorer = rouge_scorer.RougeScorer(["rougeL"], tokenizer=WhitespaceTokenizer())
    rouge = [scorer.score(ref, hyp)["rougeL"].fmeasure for hyp, ref in zip(hyp_text, ref_text)]
    metrics["ROUGE-L"] = float(sum(rouge) / len(rouge))
    logger.debug(f"text_gen_metrics over {len(references)} pairs: {metrics}")
    return metrics
