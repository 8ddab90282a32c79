"""Mask-constrained scaled dot-product cross attention.

The single attention primitive used everywhere in this package: queries from
one token set, keys/values from another, and a binary mask that states which
query/key pairs may interact at all. Masked pairs receive a large negative
logit fill before the softmax AND are hard-zeroed after it, so a masked pair
can never leak attention weight. A query whose mask row is entirely zero
returns the zero vector (its weights are all zero, not uniform).

Three orientations of the same primitive cover the full system:

* pixels attending latents  (mask = duplicated pixel-to-latent bits),
* latents attending pixels  (mask = transposed duplicated bits),
* latents attending latents (mask = block-diagonal group bits).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class AttentionRecord:
    """Post-softmax, post-zeroing attention weights from one forward pass.

    weights: (..., num_queries, num_keys), averaged over heads. Each row
    either sums to 1 (up to float rounding) or is identically zero.
    """

    weights: torch.Tensor
    query_count: int
    key_count: int


def _validate_mask(mask: torch.Tensor, num_queries: int, num_keys: int):
    if mask.shape[-2:] != (num_queries, num_keys):
        raise ValueError(
            f"mask shape {tuple(mask.shape)} does not match "
            f"(num_queries={num_queries}, num_keys={num_keys})"
        )
    binary = (mask == 0) | (mask == 1)
    if not bool(binary.all()):
        raise ValueError("mask must be binary (all entries 0 or 1)")


class SemanticCrossAttention(nn.Module):
    """Multi-head cross attention restricted by a binary pair mask.

    Logits are computed as (Q K^T * mask + mask_fill * (1 - mask)) / sqrt(attn_dim),
    softmaxed over keys, then multiplied by the mask again so masked weights
    are exactly zero. Heads split attn_dim (for Q/K) and value_dim (for V);
    head outputs are concatenated with no output projection. The mask is
    shared across heads.

    query_dim / key_dim: channel widths of the two token sets.
    attn_dim: internal Q/K width, divisible by num_heads.
    value_dim: output width (defaults to query_dim so residual adds line up),
        divisible by num_heads.
    mask_fill: additive fill for masked logits, at most -1e9. Large enough
        that masked entries underflow to exactly zero after the softmax.
    """

    def __init__(self, query_dim: int, key_dim: int, attn_dim: int,
                 value_dim: int | None = None, num_heads: int = 4,
                 mask_fill: float = -1.0e9):
        super().__init__()
        value_dim = query_dim if value_dim is None else value_dim
        if attn_dim % num_heads != 0:
            raise ValueError(f"attn_dim {attn_dim} not divisible by num_heads {num_heads}")
        if value_dim % num_heads != 0:
            raise ValueError(f"value_dim {value_dim} not divisible by num_heads {num_heads}")
        if mask_fill > -1.0e9:
            raise ValueError(f"mask_fill must be <= -1e9, got {mask_fill}")
        self.attn_dim = attn_dim
        self.value_dim = value_dim
        self.num_heads = num_heads
        self.mask_fill = float(mask_fill)
        self.query_proj = nn.Linear(query_dim, attn_dim)
        self.key_proj = nn.Linear(key_dim, attn_dim)
        self.value_proj = nn.Linear(key_dim, value_dim)

    def forward(self, queries_input: torch.Tensor, keys_input: torch.Tensor,
                mask: torch.Tensor, capture: bool = False):
        """queries_input (..., nq, query_dim), keys_input (..., nk, key_dim),
        mask (nq, nk) or (..., nq, nk) binary.

        Returns (..., nq, value_dim), or a (output, AttentionRecord) pair
        when capture is set.
        """
        unbatched = queries_input.dim() == 2
        if unbatched:
            queries_input = queries_input.unsqueeze(0)
            keys_input = keys_input.unsqueeze(0)
        nq = queries_input.shape[-2]
        nk = keys_input.shape[-2]
        _validate_mask(mask, nq, nk)

        q = self.query_proj(queries_input)
        k = self.key_proj(keys_input)
        v = self.value_proj(keys_input)
        batch = q.shape[:-2]
        heads = self.num_heads
        q = q.reshape(*batch, nq, heads, self.attn_dim // heads).transpose(-3, -2)
        k = k.reshape(*batch, nk, heads, self.attn_dim // heads).transpose(-3, -2)
        v = v.reshape(*batch, nk, heads, self.value_dim // heads).transpose(-3, -2)

        bits = mask.to(q.dtype)
        if bits.dim() == 3:
            bits = bits.unsqueeze(-3)  # insert head dim: (B, 1, nq, nk)
        elif bits.dim() != 2:
            raise ValueError(f"mask must be 2-D or 3-D, got {bits.dim()}-D")

        logits = q @ k.transpose(-2, -1)
        logits = (logits * bits + self.mask_fill * (1.0 - bits)) / math.sqrt(self.attn_dim)
        weights = torch.softmax(logits, dim=-1) * bits

        out = weights @ v
        out = out.transpose(-3, -2).reshape(*batch, nq, self.value_dim)
        if unbatched:
            out = out.squeeze(0)
        if capture:
            rec = weights.mean(dim=-3)  # average heads
            if unbatched:
                rec = rec.squeeze(0)
            return out, AttentionRecord(weights=rec.detach(), query_count=nq, key_count=nk)
        return out


def sca_pixels_to_latents(attention: SemanticCrossAttention, pixel_tokens: torch.Tensor,
                          latents: torch.Tensor, duplicated_bits: torch.Tensor,
                          capture: bool = False):
    """Pixels query, latents provide keys/values. Mask rows are pixels."""
    return attention(pixel_tokens, latents, duplicated_bits, capture=capture)


def sca_latents_to_pixels(attention: SemanticCrossAttention, latents: torch.Tensor,
                          pixel_tokens: torch.Tensor, duplicated_bits: torch.Tensor,
                          capture: bool = False):
    """Latents query, pixels provide keys/values. Uses the transposed bits,
    so a latent only sees pixels of its own label. Labels absent from the
    image leave their latents' rows fully masked -> those latents get the
    zero vector from attention."""
    return attention(latents, pixel_tokens, duplicated_bits.transpose(-2, -1),
                     capture=capture)


def sca_latents_self(attention: SemanticCrossAttention, latents: torch.Tensor,
                     group_bits: torch.Tensor, capture: bool = False):
    """Latents attend latents of the same label (block-diagonal mask)."""
    return attention(latents, latents, group_bits, capture=capture)
