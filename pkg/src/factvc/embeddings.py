"""Embedding containers, binary I/O, projection weights, and the embed store.

Two binary formats, both little-endian with no padding or trailer:

Embedding matrix file (magic ``FVCE``)::

    magic    4 bytes  b"FVCE"
    version  u16      1
    kind     u8       0=frames_pre 1=sentence_pre 2=tokens_pre 3=projected
    reserved u8       0
    dim      u32      columns
    count    u32      rows
    data     count*dim float32, row-major

Projection checkpoint (magic ``FVCW``)::

    magic        4 bytes  b"FVCW"
    version      u16      1
    d_vision_in  u32
    d_text_in    u32
    d_out        u32
    W_v          d_out*d_vision_in float32, row-major
    W_t          d_out*d_text_in float32, row-major

A checkpoint at ``model.fvcw`` carries a JSON sidecar ``model.fvcw.meta.json``
with free-form training metadata.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import httpx
import numpy as np

KIND_FRAMES_PRE = "frames_pre"
KIND_SENTENCE_PRE = "sentence_pre"
KIND_TOKENS_PRE = "tokens_pre"
KIND_PROJECTED = "projected"

KIND_CODES = {
    KIND_FRAMES_PRE: 0,
    KIND_SENTENCE_PRE: 1,
    KIND_TOKENS_PRE: 2,
    KIND_PROJECTED: 3,
}
KIND_NAMES = {code: name for name, code in KIND_CODES.items()}

_FVCE_HEADER = struct.Struct("<4sHBBII")
_FVCW_HEADER = struct.Struct("<4sHIII")

FVCE_MAGIC = b"FVCE"
FVCW_MAGIC = b"FVCW"
FORMAT_VERSION = 1


class EmbeddingError(ValueError):
    pass


class FormatError(EmbeddingError):
    """Malformed binary payload; the message names the failing byte offset."""


class StoreError(EmbeddingError):
    """Missing or inconsistent entry in an embed store."""


class EncoderError(EmbeddingError):
    """Encoder service returned an error or an inconsistent payload."""


@dataclass
class EmbeddingMatrix:
    """A (count, dim) float32 matrix tagged with what its rows represent."""

    kind: str
    vectors: np.ndarray

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise EmbeddingError(f"unknown embedding kind '{self.kind}'")
        arr = np.asarray(self.vectors)
        if arr.ndim != 2:
            raise EmbeddingError(f"vectors must be 2-D, got shape {arr.shape}")
        if arr.shape[1] == 0:
            raise EmbeddingError("dim must be positive")
        self.vectors = np.ascontiguousarray(arr, dtype=np.float32)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def write_fvce_bytes(matrix: EmbeddingMatrix) -> bytes:
    header = _FVCE_HEADER.pack(
        FVCE_MAGIC, FORMAT_VERSION, KIND_CODES[matrix.kind], 0, matrix.dim, matrix.count
    )
    return header + matrix.vectors.tobytes(order="C")


def read_fvce_bytes(data: bytes) -> EmbeddingMatrix:
    if len(data) < _FVCE_HEADER.size:
        raise FormatError(
            f"truncated header: need {_FVCE_HEADER.size} bytes, got {len(data)}"
        )
    magic, version, kind_code, reserved, dim, count = _FVCE_HEADER.unpack_from(data, 0)
    if magic != FVCE_MAGIC:
        raise FormatError(f"bad magic {magic!r} at offset 0, expected {FVCE_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version} at offset 4")
    if kind_code not in KIND_NAMES:
        raise FormatError(f"unknown kind code {kind_code} at offset 6")
    if reserved != 0:
        raise FormatError(f"reserved byte at offset 7 must be 0, got {reserved}")
    if dim == 0:
        raise FormatError("dim at offset 8 must be positive")
    expected = count * dim * 4
    payload = len(data) - _FVCE_HEADER.size
    if payload != expected:
        raise FormatError(
            f"payload at offset {_FVCE_HEADER.size}: expected {expected} bytes "
            f"({count} x {dim} float32), got {payload}"
        )
    vectors = np.frombuffer(data, dtype="<f4", count=count * dim, offset=_FVCE_HEADER.size)
    return EmbeddingMatrix(kind=KIND_NAMES[kind_code], vectors=vectors.reshape(count, dim).copy())


def write_fvce(path: str | Path, matrix: EmbeddingMatrix):
    Path(path).write_bytes(write_fvce_bytes(matrix))


def read_fvce(path: str | Path) -> EmbeddingMatrix:
    path = Path(path)
    try:
        return read_fvce_bytes(path.read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


@dataclass
class ProjectionWeights:
    """Trainable linear maps into the shared metric space.

    ``w_v`` has shape (d_out, d_vision_in) and ``w_t`` (d_out, d_text_in);
    a pre-trained embedding ``h`` projects as ``W @ h``.
    """

    w_v: np.ndarray
    w_t: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.w_v = np.ascontiguousarray(self.w_v, dtype=np.float32)
        self.w_t = np.ascontiguousarray(self.w_t, dtype=np.float32)
        if self.w_v.ndim != 2 or self.w_t.ndim != 2:
            raise EmbeddingError("projection weights must be 2-D matrices")
        if self.w_v.shape[0] != self.w_t.shape[0]:
            raise EmbeddingError(
                f"output dims differ: vision {self.w_v.shape[0]} vs text {self.w_t.shape[0]}"
            )

    @property
    def d_vision_in(self) -> int:
        return self.w_v.shape[1]

    @property
    def d_text_in(self) -> int:
        return self.w_t.shape[1]

    @property
    def d_out(self) -> int:
        return self.w_v.shape[0]


def identity_weights(dim: int) -> ProjectionWeights:
    """No-op projection for encoders whose two towers already share a space."""
    eye = np.eye(dim, dtype=np.float32)
    return ProjectionWeights(w_v=eye.copy(), w_t=eye.copy())


def write_fvcw(path: str | Path, weights: ProjectionWeights):
    path = Path(path)
    header = _FVCW_HEADER.pack(
        FVCW_MAGIC,
        FORMAT_VERSION,
        weights.d_vision_in,
        weights.d_text_in,
        weights.d_out,
    )
    path.write_bytes(header + weights.w_v.tobytes(order="C") + weights.w_t.tobytes(order="C"))
    sidecar = Path(str(path) + ".meta.json")
    sidecar.write_text(json.dumps(weights.meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_fvcw(path: str | Path) -> ProjectionWeights:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _FVCW_HEADER.size:
        raise FormatError(
            f"{path}: truncated header: need {_FVCW_HEADER.size} bytes, got {len(data)}"
        )
    magic, version, d_vision, d_text, d_out = _FVCW_HEADER.unpack_from(data, 0)
    if magic != FVCW_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0, expected {FVCW_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    n_v = d_out * d_vision
    n_t = d_out * d_text
    expected = (n_v + n_t) * 4
    payload = len(data) - _FVCW_HEADER.size
    if payload != expected:
        raise FormatError(
            f"{path}: payload at offset {_FVCW_HEADER.size}: expected {expected} bytes, got {payload}"
        )
    flat = np.frombuffer(data, dtype="<f4", count=n_v + n_t, offset=_FVCW_HEADER.size)
    w_v = flat[:n_v].reshape(d_out, d_vision).copy()
    w_t = flat[n_v:].reshape(d_out, d_text).copy()
    meta = {}
    sidecar = Path(str(path) + ".meta.json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
    return ProjectionWeights(w_v=w_v, w_t=w_t, meta=meta)


SIDE_VISION = "vision"
SIDE_TEXT = "text"

# Which sides a stored kind may legally be projected through.
_KIND_SIDES = {
    KIND_FRAMES_PRE: SIDE_VISION,
    KIND_SENTENCE_PRE: SIDE_TEXT,
    KIND_TOKENS_PRE: SIDE_TEXT,
}


def infer_side(kind: str) -> str:
    """The projection side matching an embedding kind."""
    try:
        return _KIND_SIDES[kind]
    except KeyError:
        raise EmbeddingError(f"cannot project embeddings of kind '{kind}'") from None


def project(
    matrix: EmbeddingMatrix, weights: ProjectionWeights, side: str | None = None
) -> EmbeddingMatrix:
    """Map pre-trained embeddings into the metric space; no normalization.

    ``side`` selects ``w_v`` ("vision") or ``w_t`` ("text"); when omitted it
    is inferred from the matrix kind. Already-projected input is rejected.
    """
    inferred = infer_side(matrix.kind)
    if side is None:
        side = inferred
    if side not in (SIDE_VISION, SIDE_TEXT):
        raise EmbeddingError(f"side must be 'vision' or 'text', got '{side}'")
    if side != inferred:
        raise EmbeddingError(f"kind '{matrix.kind}' cannot project through the {side} side")
    w = weights.w_v if side == SIDE_VISION else weights.w_t
    if matrix.dim != w.shape[1]:
        raise EmbeddingError(
            f"{side} projection expects input dim {w.shape[1]}, matrix has dim {matrix.dim}"
        )
    out = matrix.vectors.astype(np.float64) @ w.T.astype(np.float64)
    return EmbeddingMatrix(kind=KIND_PROJECTED, vectors=out.astype(np.float32))


def mean_pool(matrix: EmbeddingMatrix) -> np.ndarray:
    """Row mean as float64; rejects empty matrices."""
    if matrix.count == 0:
        raise EmbeddingError("cannot pool an empty embedding matrix")
    return matrix.vectors.astype(np.float64).mean(axis=0)


# ---------------------------------------------------------------------------
# Deterministic synthetic embeddings
# ---------------------------------------------------------------------------


def _string_seed(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


class SyntheticWorld:
    """Unit vectors clustered around orthonormal concept anchors.

    Every concept gets an anchor; members of a concept sit within a wobble
    cone of the anchor, with the noise component orthogonal to the whole
    anchor span. With wobble ``w``, any two members of one concept have
    cosine >= 1 - 2*w**2 and members of different concepts have cosine in
    [-w**2, w**2]. Fully deterministic in (seed, concept, salt).
    """

    def __init__(self, dim: int, concepts: list[str], *, seed: int = 0, wobble: float = 0.15):
        if len(set(concepts)) != len(concepts):
            raise EmbeddingError("concepts must be unique")
        if len(concepts) >= dim:
            raise EmbeddingError(
                f"need dim > n_concepts for orthonormal anchors, got dim={dim} "
                f"for {len(concepts)} concepts"
            )
        if not 0 <= wobble < 1:
            raise EmbeddingError(f"wobble must be in [0, 1), got {wobble}")
        self.dim = dim
        self.wobble = wobble
        self.seed = seed
        rng = np.random.default_rng([seed, len(concepts), dim])
        self._basis = np.linalg.qr(rng.standard_normal((dim, len(concepts))))[0]
        self._anchors = {
            name: self._basis[:, i].copy() for i, name in enumerate(sorted(concepts))
        }

    @property
    def concepts(self) -> list[str]:
        return sorted(self._anchors)

    def anchor(self, concept: str) -> np.ndarray:
        try:
            return self._anchors[concept].copy()
        except KeyError:
            raise EmbeddingError(f"unknown concept '{concept}'") from None

    def member(self, concept: str, salt: str = "") -> np.ndarray:
        """A unit vector near the concept anchor, unique per (concept, salt)."""
        a = self.anchor(concept)
        if self.wobble == 0:
            return a
        rng = np.random.default_rng([self.seed, _string_seed(concept), _string_seed(salt)])
        noise = rng.standard_normal(self.dim)
        # Remove every anchor direction so cross-concept cosine stays within
        # wobble**2 regardless of which anchors the two members belong to.
        noise -= self._basis @ (self._basis.T @ noise)
        noise /= np.linalg.norm(noise)
        v = np.sqrt(1.0 - self.wobble**2) * a + self.wobble * noise
        return v / np.linalg.norm(v)

    def members(self, concepts: list[str], salt: str = "") -> np.ndarray:
        return np.stack([self.member(c, f"{salt}|{i}") for i, c in enumerate(concepts)])

    def mixture(self, concepts: list[str], salt: str = "") -> np.ndarray:
        """Normalized mean of one member per concept; a sentence-level stand-in."""
        if not concepts:
            raise EmbeddingError("mixture needs at least one concept")
        mean = self.members(concepts, salt).mean(axis=0)
        return mean / np.linalg.norm(mean)


_SYNTH_KINDS = {
    "frames": KIND_FRAMES_PRE,
    "tokens": KIND_TOKENS_PRE,
    "sentence": KIND_SENTENCE_PRE,
}


def synth_embeddings(seed: int, spec: dict) -> dict[str, EmbeddingMatrix]:
    """Deterministic embedding sets with a planted concept structure.

    ``spec`` lays out rows by concept id::

        {"dim": 32,
         "frames": ["dog", "ball", "dog"],
         "tokens": ["dog", "ball"],
         "sentence": ["dog", "ball"]}

    ``frames`` and ``tokens`` assign one concept per row; ``sentence``
    (optional) yields a single normalized mixture row over its concepts.
    Rows sharing a concept have cosine >= 0.95 and rows of different
    concepts have |cosine| <= 0.05, identically under identity projection.
    Identical (seed, spec) produces bit-identical output. Too many concepts
    for the requested dim is an error.
    """
    if "dim" not in spec:
        raise EmbeddingError("spec must include 'dim'")
    dim = int(spec["dim"])
    unknown = set(spec) - set(_SYNTH_KINDS) - {"dim"}
    if unknown:
        raise EmbeddingError(f"unknown spec keys: {sorted(unknown)}")
    concepts = set()
    for key in _SYNTH_KINDS:
        concepts.update(spec.get(key, ()))
    if not concepts:
        raise EmbeddingError("spec assigns no concepts")
    world = SyntheticWorld(dim, sorted(concepts), seed=seed)
    out: dict[str, EmbeddingMatrix] = {}
    for key, kind in _SYNTH_KINDS.items():
        layout = spec.get(key)
        if layout is None:
            continue
        if key == "sentence":
            rows = world.mixture(list(layout), salt="sentence")[None, :]
        else:
            rows = world.members(list(layout), salt=key)
        out[key] = EmbeddingMatrix(kind=kind, vectors=rows.astype(np.float32))
    return out


# ---------------------------------------------------------------------------
# Encoder service client
# ---------------------------------------------------------------------------


# Kind names used on the encoder wire, mapped to the stored matrix kinds.
WIRE_KINDS = {
    "frames": KIND_FRAMES_PRE,
    "sentence": KIND_SENTENCE_PRE,
    "tokens": KIND_TOKENS_PRE,
}
_WIRE_BY_KIND = {stored: wire for wire, stored in WIRE_KINDS.items()}


class EncoderClient:
    """Small HTTP client for an embedding encoder service.

    ``POST {base_url}/encode`` with ``{"kind": "frames"|"sentence"|"tokens",
    "items": [...]}`` must return an FVCE body with one row per item;
    ``GET {base_url}/dims`` must return ``{"vision": int, "text": int,
    "embed": int}``. Transport errors and 5xx responses are retried.
    """

    def __init__(
        self,
        base_url: str,
        *,
        timeout: float = 30.0,
        retries: int = 2,
        backoff_s: float = 0.05,
        transport: httpx.BaseTransport | None = None,
    ):
        self.retries = retries
        self.backoff_s = backoff_s
        self._client = httpx.Client(base_url=base_url, timeout=timeout, transport=transport)

    def close(self):
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _request(self, method: str, url: str, **kwargs) -> httpx.Response:
        last_error = None
        for attempt in range(self.retries + 1):
            if attempt and self.backoff_s:
                time.sleep(self.backoff_s * attempt)
            try:
                response = self._client.request(method, url, **kwargs)
            except httpx.TransportError as exc:
                last_error = str(exc)
                continue
            if response.status_code >= 500:
                last_error = f"HTTP {response.status_code}"
                continue
            if response.status_code != 200:
                raise EncoderError(
                    f"{method} {url} failed: HTTP {response.status_code}: {response.text[:200]}"
                )
            return response
        raise EncoderError(
            f"{method} {url} failed after {self.retries + 1} attempts: {last_error}"
        )

    def dims(self) -> dict[str, int]:
        payload = self._request("GET", "/dims").json()
        for key in ("vision", "text", "embed"):
            if not isinstance(payload.get(key), int):
                raise EncoderError(f"/dims response missing integer field '{key}'")
        return {k: payload[k] for k in ("vision", "text", "embed")}

    def encode(self, kind: str, items: list[str]) -> EmbeddingMatrix:
        """Encode items; ``kind`` may be a wire name or a stored kind name."""
        wire = kind if kind in WIRE_KINDS else _WIRE_BY_KIND.get(kind)
        if wire is None:
            raise EncoderError(f"unknown embedding kind '{kind}'")
        expected_kind = WIRE_KINDS[wire]
        response = self._request("POST", "/encode", json={"kind": wire, "items": list(items)})
        matrix = read_fvce_bytes(response.content)
        if matrix.kind != expected_kind:
            raise EncoderError(
                f"asked for kind '{wire}', service returned '{matrix.kind}'"
            )
        if matrix.count != len(items):
            raise EncoderError(
                f"asked for {len(items)} items, service returned {matrix.count} rows"
            )
        return matrix

    def encode_sentences(self, sentences: list[str]) -> EmbeddingMatrix:
        return self.encode("sentence", sentences)

    def encode_tokens(self, tokens: list[str]) -> EmbeddingMatrix:
        return self.encode("tokens", tokens)

    def encode_frames(self, frame_refs: list[str]) -> EmbeddingMatrix:
        return self.encode("frames", frame_refs)


def encode_remote(
    client_config, kind: str, items: list[str], *, expected_dim: int | None = None
) -> EmbeddingMatrix:
    """One-shot remote encode through an encoder service.

    ``client_config`` is an existing :class:`EncoderClient`, a base URL
    string, or a dict of ``EncoderClient`` keyword arguments. Transient
    failures retry per the client's policy; a response whose dim disagrees
    with ``expected_dim`` is rejected.
    """
    if isinstance(client_config, EncoderClient):
        matrix = client_config.encode(kind, items)
    else:
        if isinstance(client_config, str):
            client = EncoderClient(client_config)
        elif isinstance(client_config, dict):
            client = EncoderClient(**client_config)
        else:
            raise EncoderError(
                f"client_config must be an EncoderClient, URL, or kwargs dict, "
                f"got {type(client_config).__name__}"
            )
        with client:
            matrix = client.encode(kind, items)
    if expected_dim is not None and matrix.dim != expected_dim:
        raise EncoderError(
            f"service returned dim {matrix.dim}, expected {expected_dim}"
        )
    return matrix


# ---------------------------------------------------------------------------
# On-disk embedding store
# ---------------------------------------------------------------------------

_SAFE_ID = re.compile(r"^[A-Za-z0-9._-]+$")


def _safe_name(identifier: str) -> str:
    if _SAFE_ID.match(identifier):
        return identifier
    return hashlib.sha256(identifier.encode("utf-8")).hexdigest()[:16]


def text_key(text: str) -> str:
    """Content address for a text; the store files texts under this key."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


class EmbedStore:
    """Directory of FVCE files keyed by video id and by text content.

    Layout::

        {video_id}.frames.fvce     pre-trained frame embeddings, whole video
        {video_id}.clips.json      {"clip_frame_ranges": [[start, end), ...]}
        texts/{key}.sent.fvce      one-row sentence embedding
        texts/{key}.tok.fvce       per-token embeddings
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _frames_path(self, video_id: str) -> Path:
        return self.root / f"{_safe_name(video_id)}.frames.fvce"

    def _clips_path(self, video_id: str) -> Path:
        return self.root / f"{_safe_name(video_id)}.clips.json"

    def _text_path(self, text: str, suffix: str) -> Path:
        return self.root / "texts" / f"{text_key(text)}.{suffix}.fvce"

    def put_frames(
        self,
        video_id: str,
        matrix: EmbeddingMatrix,
        clip_frame_ranges: list[tuple[int, int]] | None = None,
    ):
        if matrix.kind != KIND_FRAMES_PRE:
            raise StoreError(f"frames entry must be kind '{KIND_FRAMES_PRE}', got '{matrix.kind}'")
        if clip_frame_ranges is not None:
            for i, (start, end) in enumerate(clip_frame_ranges):
                if not 0 <= start < end <= matrix.count:
                    raise StoreError(
                        f"clip {i} frame range [{start}, {end}) invalid for "
                        f"{matrix.count} frames"
                    )
        self.root.mkdir(parents=True, exist_ok=True)
        write_fvce(self._frames_path(video_id), matrix)
        if clip_frame_ranges is not None:
            self._clips_path(video_id).write_text(
                json.dumps({"clip_frame_ranges": [[s, e] for s, e in clip_frame_ranges]}) + "\n",
                encoding="utf-8",
            )

    def get_frames(self, video_id: str) -> EmbeddingMatrix:
        path = self._frames_path(video_id)
        if not path.exists():
            raise StoreError(f"no frame embeddings for video '{video_id}' ({path})")
        return read_fvce(path)

    def has_frames(self, video_id: str) -> bool:
        return self._frames_path(video_id).exists()

    def get_clip_ranges(self, video_id: str) -> list[tuple[int, int]] | None:
        path = self._clips_path(video_id)
        if not path.exists():
            return None
        payload = json.loads(path.read_text(encoding="utf-8"))
        return [(int(s), int(e)) for s, e in payload["clip_frame_ranges"]]

    def put_text(
        self,
        text: str,
        *,
        sentence: EmbeddingMatrix | None = None,
        tokens: EmbeddingMatrix | None = None,
    ):
        (self.root / "texts").mkdir(parents=True, exist_ok=True)
        if sentence is not None:
            if sentence.kind != KIND_SENTENCE_PRE or sentence.count != 1:
                raise StoreError("sentence entry must be a one-row matrix of kind 'sentence_pre'")
            write_fvce(self._text_path(text, "sent"), sentence)
        if tokens is not None:
            if tokens.kind != KIND_TOKENS_PRE:
                raise StoreError(f"tokens entry must be kind '{KIND_TOKENS_PRE}', got '{tokens.kind}'")
            write_fvce(self._text_path(text, "tok"), tokens)

    def get_text_sentence(self, text: str) -> EmbeddingMatrix:
        path = self._text_path(text, "sent")
        if not path.exists():
            raise StoreError(f"no sentence embedding for text {text!r} ({path})")
        return read_fvce(path)

    def get_text_tokens(self, text: str) -> EmbeddingMatrix:
        path = self._text_path(text, "tok")
        if not path.exists():
            raise StoreError(f"no token embeddings for text {text!r} ({path})")
        return read_fvce(path)

    def has_text(self, text: str) -> bool:
        return self._text_path(text, "sent").exists() and self._text_path(text, "tok").exists()

    def has_text_sentence(self, text: str) -> bool:
        return self._text_path(text, "sent").exists()

    def has_text_tokens(self, text: str) -> bool:
        return self._text_path(text, "tok").exists()

    def ensure_texts(self, texts: list[str], client: EncoderClient, tokenizer=None):
        """Fetch and store any missing text embeddings through an encoder client."""
        from .corpus import tokenize as default_tokenize

        tokenizer = tokenizer or default_tokenize
        missing = [t for t in dict.fromkeys(texts) if not self.has_text(t)]
        if not missing:
            return
        sentences = client.encode_sentences(missing)
        for i, text in enumerate(missing):
            tokens = client.encode_tokens(tokenizer(text))
            self.put_text(
                text,
                sentence=EmbeddingMatrix(KIND_SENTENCE_PRE, sentences.vectors[i : i + 1]),
                tokens=tokens,
            )
