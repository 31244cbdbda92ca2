"""
Network - Input embedders, multimodal encoder and causal decoder

The network object holds no weights: every method takes the parameter set
to run with, so the same code serves the query and the key network.
"""

import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Tuple

import numpy as np

from ..core import ops
from ..core.errors import LabelError, ShapeError
from ..core.tensor import Tensor
from .config import ModelConfig

logger = logging.getLogger(__name__)

Params = Mapping[str, Tensor]


@dataclass
class EncodedPair:
    """Encoder outputs for a batch of video-text pairs"""
    text: Tensor          # W_E, (B, n, d); zero at pad positions
    frames: Tensor        # F_E, (B, m, d); zero at pad positions
    text_rep: Tensor      # R_t, (B, d)
    visual_rep: Tensor    # R_v, (B, d)
    cls: Tensor           # (B, d)


def _linear(params: Params, prefix: str, x: Tensor) -> Tensor:
    return ops.matmul(x, params[f"{prefix}.weight"]) + params[f"{prefix}.bias"]


def _layer_norm(params: Params, prefix: str, x: Tensor) -> Tensor:
    return ops.layer_norm(x, params[f"{prefix}.scale"], params[f"{prefix}.shift"])


def text_pool_mask(token_ids: np.ndarray, text_mask: np.ndarray, config: ModelConfig) -> np.ndarray:
    """Real text positions other than [CLS] and [SEP]"""
    return text_mask & (token_ids != config.cls_id) & (token_ids != config.sep_id)


class VideoTextTransformer:
    """
    Single-stream multimodal transformer with a causal decoder

    Args:
        config: Architecture settings
    """
    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config

    def _attention(self, params: Params, prefix: str, queries: Tensor, keys: Tensor,
                   allowed: np.ndarray) -> Tensor:
        """
        Multi-head scaled dot-product attention

        Args:
            allowed: Boolean (B, Lq, Lk) matrix; false entries get zero weight
        """
        cfg = self.config
        batch, len_q, _ = queries.shape
        len_k = keys.shape[1]
        h, dh = cfg.heads, cfg.head_dim

        def split(x, length):
            return ops.transpose(ops.reshape(x, (batch, length, h, dh)), (0, 2, 1, 3))

        q = split(_linear(params, f"{prefix}.query", queries), len_q)
        k = split(_linear(params, f"{prefix}.key", keys), len_k)
        v = split(_linear(params, f"{prefix}.value", keys), len_k)
        scores = ops.scale(ops.matmul(q, ops.swap_last(k)), 1.0 / np.sqrt(dh))
        weights = ops.softmax(scores, mask=allowed[:, None, :, :])
        context = ops.reshape(ops.transpose(ops.matmul(weights, v), (0, 2, 1, 3)), (batch, len_q, h * dh))
        return _linear(params, f"{prefix}.out", context)

    def _feed_forward(self, params: Params, prefix: str, x: Tensor) -> Tensor:
        return _linear(params, f"{prefix}.out", ops.gelu(_linear(params, f"{prefix}.in", x)))

    def embed_text(self, params: Params, token_ids: np.ndarray, pad_mask: Optional[np.ndarray] = None) -> Tensor:
        """
        LN(token embedding + position embedding) for every position

        Pad positions are embedded too; consumers exclude them via the mask.

        Args:
            token_ids: Integer array (B, t), t <= max_tokens
            pad_mask: Boolean (B, t), true at real tokens (checked for shape only)

        Raises:
            LabelError: If an id is outside the vocabulary
        """
        token_ids = np.asarray(token_ids, dtype=np.int64)
        if token_ids.ndim != 2 or token_ids.shape[1] > self.config.max_tokens:
            raise ShapeError(f"embed_text: expected (batch, <= {self.config.max_tokens}) ids, got {token_ids.shape}")
        if pad_mask is not None and np.shape(pad_mask) != token_ids.shape:
            raise ShapeError(f"embed_text: pad mask {np.shape(pad_mask)} does not match ids {token_ids.shape}")
        if token_ids.size and (token_ids.min() < 0 or token_ids.max() >= self.config.vocab_size):
            raise LabelError(f"embed_text: token id {int(token_ids.max())} outside vocabulary of {self.config.vocab_size}")
        length = token_ids.shape[1]
        tokens = ops.embedding(params["embeddings.token"], token_ids)
        positions = ops.index(params["embeddings.text_position"], slice(0, length))
        return _layer_norm(params, "embeddings.text_ln", tokens + positions)

    def embed_frames(self, params: Params, features: np.ndarray, pad_mask: Optional[np.ndarray] = None) -> Tensor:
        """
        LN(FC(feature) + frame position embedding) for every frame slot

        Args:
            features: Float array (B, m', frame_dim), m' <= max_frames; masked
                frames already zeroed
            pad_mask: Boolean (B, m'), true at real frames (checked for shape only)
        """
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 3 or features.shape[2] != self.config.frame_dim:
            raise ShapeError(
                f"embed_frames: expected (batch, frames, {self.config.frame_dim}) features, got {features.shape}"
            )
        if features.shape[1] > self.config.max_frames:
            raise ShapeError(f"embed_frames: {features.shape[1]} frames exceed max_frames={self.config.max_frames}")
        if pad_mask is not None and np.shape(pad_mask) != features.shape[:2]:
            raise ShapeError(f"embed_frames: pad mask {np.shape(pad_mask)} does not match features {features.shape}")
        projected = _linear(params, "embeddings.frame_proj", Tensor(features, copy=False))
        positions = ops.index(params["embeddings.frame_position"], slice(0, features.shape[1]))
        return _layer_norm(params, "embeddings.frame_ln", projected + positions)

    def encode(self, params: Params, text_emb: Tensor, frame_emb: Tensor, text_mask: np.ndarray,
               frame_mask: np.ndarray, pool_mask: Optional[np.ndarray] = None) -> EncodedPair:
        """
        Bidirectional self-attention over the concatenated [W, F] sequence

        Args:
            text_emb: (B, n, d) from ``embed_text``
            frame_emb: (B, m, d) from ``embed_frames``
            text_mask: Boolean (B, n), true at real tokens
            frame_mask: Boolean (B, m), true at real frames
            pool_mask: Text positions entering R_t (default: real tokens
                except position 0 and the last real token)

        Returns:
            EncodedPair
        """
        text_mask = np.asarray(text_mask, dtype=bool)
        frame_mask = np.asarray(frame_mask, dtype=bool)
        n = text_emb.shape[1]
        if pool_mask is None:
            pool_mask = text_mask.copy()
            pool_mask[:, 0] = False
            last = text_mask.sum(axis=1) - 1
            pool_mask[np.arange(len(last)), np.maximum(last, 0)] = False

        joint = np.concatenate([text_mask, frame_mask], axis=1)
        allowed = np.broadcast_to(joint[:, None, :], (joint.shape[0], joint.shape[1], joint.shape[1]))
        x = ops.concat([text_emb, frame_emb], axis=1)
        for i in range(self.config.encoder_blocks):
            normed = _layer_norm(params, f"encoder.{i}.attn_ln", x)
            x = x + self._attention(params, f"encoder.{i}.attn", normed, normed, allowed)
            x = x + self._feed_forward(params, f"encoder.{i}.ffn", _layer_norm(params, f"encoder.{i}.ffn_ln", x))
        x = _layer_norm(params, "encoder.final_ln", x)
        x = x * Tensor(joint[:, :, None].astype(np.float64), copy=False)

        text_out = ops.index(x, (slice(None), slice(0, n)))
        frame_out = ops.index(x, (slice(None), slice(n, None)))
        return EncodedPair(
            text=text_out,
            frames=frame_out,
            text_rep=ops.masked_max(text_out, pool_mask, axis=1),
            visual_rep=ops.masked_max(frame_out, frame_mask, axis=1),
            cls=ops.index(x, (slice(None), 0)),
        )

    def embed_and_encode(self, params: Params, token_ids: np.ndarray, features: np.ndarray,
                         text_mask: np.ndarray, frame_mask: np.ndarray) -> EncodedPair:
        """Embed both modalities and encode, pooling text over non-structural tokens"""
        text_emb = self.embed_text(params, token_ids, text_mask)
        frame_emb = self.embed_frames(params, features, frame_mask)
        pool = text_pool_mask(np.asarray(token_ids), np.asarray(text_mask, dtype=bool), self.config)
        return self.encode(params, text_emb, frame_emb, text_mask, frame_mask, pool_mask=pool)

    def decoder_context(self, encoded: EncodedPair, text_mask: np.ndarray,
                        frame_mask: np.ndarray) -> Tuple[Tensor, np.ndarray]:
        """Cross-attention memory: F_E, or [W_E, F_E] with ``cross_attend_text``"""
        if self.config.cross_attend_text:
            return (ops.concat([encoded.text, encoded.frames], axis=1),
                    np.concatenate([text_mask, frame_mask], axis=1))
        return encoded.frames, np.asarray(frame_mask, dtype=bool)

    def decode(self, params: Params, prev_ids: np.ndarray, context: Tensor, context_mask: np.ndarray,
               prev_mask: Optional[np.ndarray] = None) -> Tensor:
        """
        Next-token logits from causal self-attention plus cross-attention

        Logits at position i depend only on ``prev_ids[:, :i+1]`` and the context.

        Args:
            prev_ids: Integer (B, t) decoder inputs, starting with [CLS]
            context: Cross-attention memory (B, L, d), normally F_E
            context_mask: Boolean (B, L), true at real context positions
            prev_mask: Boolean (B, t), true at real decoder inputs

        Returns:
            (B, t, V) logits

        Raises:
            ShapeError: If t exceeds max_tokens
        """
        prev_ids = np.asarray(prev_ids, dtype=np.int64)
        batch, t = prev_ids.shape
        if t > self.config.max_tokens:
            raise ShapeError(f"decode: {t} decoder positions exceed max_tokens={self.config.max_tokens}")
        if prev_mask is None:
            prev_mask = np.ones((batch, t), dtype=bool)
        prev_mask = np.asarray(prev_mask, dtype=bool)
        context_mask = np.asarray(context_mask, dtype=bool)

        tokens = ops.embedding(params["embeddings.token"], prev_ids)
        positions = ops.index(params["embeddings.text_position"], slice(0, t))
        x = _layer_norm(params, "decoder.embed_ln", tokens + positions)

        causal = np.tril(np.ones((t, t), dtype=bool))[None, :, :] & prev_mask[:, None, :]
        cross = np.broadcast_to(context_mask[:, None, :], (batch, t, context_mask.shape[1]))
        for i in range(self.config.decoder_blocks):
            normed = _layer_norm(params, f"decoder.{i}.self_ln", x)
            x = x + self._attention(params, f"decoder.{i}.self_attn", normed, normed, causal)
            x = x + self._attention(params, f"decoder.{i}.cross_attn",
                                    _layer_norm(params, f"decoder.{i}.cross_ln", x), context, cross)
            x = x + self._feed_forward(params, f"decoder.{i}.ffn", _layer_norm(params, f"decoder.{i}.ffn_ln", x))
        x = _layer_norm(params, "decoder.final_ln", x)
        x = x * Tensor(prev_mask[:, :, None].astype(np.float64), copy=False)

        if self.config.tie_output_embeddings:
            weight = ops.transpose(params["embeddings.token"], (1, 0))
        else:
            weight = params["decoder.output.weight"]
        return ops.matmul(x, weight) + params["decoder.output.bias"]
