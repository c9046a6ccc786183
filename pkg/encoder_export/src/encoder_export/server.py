"""HTTP facade over the encoder, speaking the embedding-service wire.

``POST /encode`` takes ``{"kind": "frames"|"sentence"|"tokens", "items":
[...strings]}`` and answers with raw FVCE bytes, one row per item, tagged
``frames_pre``/``sentence_pre``/``tokens_pre``. ``GET /dims`` reports the
variant's tower and embedding dims. This is the same protocol the scoring
toolkit's encoder client and embed store expect.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel

from .encoder import DEFAULT_VARIANT, HashEncoder
from .fvcio import (
    KIND_FRAMES_PRE,
    KIND_SENTENCE_PRE,
    KIND_TOKENS_PRE,
    write_matrix_bytes,
)

WIRE_KINDS = {
    "frames": KIND_FRAMES_PRE,
    "sentence": KIND_SENTENCE_PRE,
    "tokens": KIND_TOKENS_PRE,
}


class EncodeIn(BaseModel):
    kind: str
    items: list[str]


def create_app(variant: str = DEFAULT_VARIANT) -> FastAPI:
    encoder = HashEncoder(variant)
    app = FastAPI(title="embedding encoder service")
    app.state.encoder = encoder

    @app.get("/dims")
    def get_dims():
        return encoder.dims()

    @app.post("/encode")
    def post_encode(payload: EncodeIn):
        if payload.kind == "frames":
            matrix = encoder.encode_frames(payload.items)
        elif payload.kind == "sentence":
            matrix = encoder.encode_sentences(payload.items)
        elif payload.kind == "tokens":
            matrix = encoder.encode_tokens(payload.items)
        else:
            raise HTTPException(
                status_code=422,
                detail=f"kind must be one of {sorted(WIRE_KINDS)}, got '{payload.kind}'",
            )
        return Response(
            content=write_matrix_bytes(WIRE_KINDS[payload.kind], matrix),
            media_type="application/octet-stream",
        )

    return app
