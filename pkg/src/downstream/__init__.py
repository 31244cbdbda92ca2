"""
Downstream module - retrieval, classification, captioning and embedding export
"""

from .caption import CaptionReport, beam_search, caption_generate, evaluate_caption, finetune_caption, greedy_decode
from .classify import ClassHeadSpec, evaluate_classify, finetune_classify
from .common import FinetuneResult, load_query_params
from .export import export_embeddings
from .metrics import text_gen_metrics
from .retrieval import (RetrievalCandidateSet, RetrievalReport, evaluate_retrieval, finetune_retrieval,
                        recall_at_k, score_pair)
