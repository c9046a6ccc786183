"""Deterministic stand-in for a frozen dual encoder.

Real frame and text towers need model weights and heavyweight inference;
this sidecar treats them as an external boundary and fills the contract
with a hash featurizer: every item string maps to a fixed unit vector
seeded by its content, and a sentence feature is the normalized mean of
its word-token features. Output depends only on (variant, item), so
re-encoding anything is bit-identical, which is what the export pipeline
and its consumers actually rely on.

Each variant also carries a fixed pair of projection heads mapping the
tower spaces into the shared embedding space. They stand in for the
encoder's original final linear layers: exported once as a checkpoint,
they give scoring a working projection before any finetuning has run.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .manifest import word_tokens


class VariantError(ValueError):
    """Unknown or unusable encoder variant."""


@dataclass(frozen=True)
class EncoderVariant:
    """Named encoder configuration: tower dims and shared embedding dim."""

    name: str
    d_vision: int
    d_text: int
    d_embed: int

    def dims(self) -> dict[str, int]:
        return {"vision": self.d_vision, "text": self.d_text, "embed": self.d_embed}


VARIANTS = {
    "unit-small": EncoderVariant("unit-small", d_vision=24, d_text=20, d_embed=16),
    "unit-base": EncoderVariant("unit-base", d_vision=48, d_text=40, d_embed=32),
    "unit-wide": EncoderVariant("unit-wide", d_vision=96, d_text=80, d_embed=64),
}

DEFAULT_VARIANT = "unit-base"


def resolve_variant(name: str) -> EncoderVariant:
    try:
        return VARIANTS[name]
    except KeyError:
        raise VariantError(
            f"unknown encoder variant '{name}' (have: {', '.join(sorted(VARIANTS))})"
        ) from None


def _string_seed(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def _unit_vector(seed: int, dim: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


class HashEncoder:
    """Deterministic featurizer with one vector per (variant, space, item)."""

    def __init__(self, variant: str = DEFAULT_VARIANT):
        self.variant = resolve_variant(variant)

    def dims(self) -> dict[str, int]:
        return self.variant.dims()

    def _feature(self, space: str, item: str, dim: int) -> np.ndarray:
        return _unit_vector(_string_seed(f"{self.variant.name}|{space}|{item}"), dim)

    def encode_frames(self, frame_refs: list[str]) -> np.ndarray:
        """(n, d_vision) float32, one unit row per frame reference string."""
        d = self.variant.d_vision
        rows = [self._feature("vision", ref, d) for ref in frame_refs]
        return np.array(rows, dtype=np.float32).reshape(len(frame_refs), d)

    def encode_tokens(self, tokens: list[str]) -> np.ndarray:
        """(n, d_text) float32, one unit row per token string."""
        d = self.variant.d_text
        rows = [self._feature("text", tok, d) for tok in tokens]
        return np.array(rows, dtype=np.float32).reshape(len(tokens), d)

    def encode_sentences(self, texts: list[str]) -> np.ndarray:
        """(n, d_text) float32; each row pools the sentence's token features.

        The sentence feature is the normalized mean of the float32 token
        rows, so it is exactly reconstructible from :meth:`encode_tokens`.
        A text with no word tokens falls back to its own string feature.
        """
        rows = []
        for text in texts:
            tokens = word_tokens(text)
            if not tokens:
                rows.append(self._feature("text", text, self.variant.d_text).astype(np.float32))
                continue
            pooled = self.encode_tokens(tokens).astype(np.float64).mean(axis=0)
            rows.append((pooled / np.linalg.norm(pooled)).astype(np.float32))
        return np.array(rows, dtype=np.float32).reshape(len(texts), self.variant.d_text)

    def projection(self) -> tuple[np.ndarray, np.ndarray]:
        """The variant's original heads: (d_embed, d_vision) and (d_embed, d_text).

        Rows are orthonormal, so projected vectors keep bounded norms.
        Derived from the variant name alone; every call returns the same
        matrices bit for bit.
        """
        w_v = _head(self.variant.name, "vision", self.variant.d_embed, self.variant.d_vision)
        w_t = _head(self.variant.name, "text", self.variant.d_embed, self.variant.d_text)
        return w_v, w_t


def _head(name: str, tower: str, d_out: int, d_in: int) -> np.ndarray:
    if d_out > d_in:
        raise VariantError(
            f"variant '{name}' {tower} head needs d_embed <= tower dim, got {d_out} > {d_in}"
        )
    rng = np.random.default_rng(_string_seed(f"{name}|head|{tower}"))
    q = np.linalg.qr(rng.standard_normal((d_in, d_out)))[0]
    return np.ascontiguousarray(q.T, dtype=np.float32)
