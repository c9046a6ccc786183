"""Rule-based caption transforms and weak-supervision triple generation.

Positive transforms keep a sentence consistent with its video (round-trip
machine translation, clause splitting); negative transforms corrupt one
aspect of it (swapped person words, dropped or inserted actions, swapped
objects, swapped color or numeral adjectives, noisy-generation artifacts).

Every transform is deterministic given its RNG and returns ``None`` when it
does not apply to the input, so callers can tell "no-op" from "changed".
Generation walks a caption set, applies each positive transform to each
sentence, then pairs every surviving positive with every applicable
negative family:

    positives  = {original} + {p(original) : p applies}
    triples    = {(video, pos, n(pos)) : pos in positives, n applies}
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Protocol

import httpx
import numpy as np

from .corpus import Corpus, CorpusError, TripleRecord, detokenize, tokenize

UNK_TOKEN = "UNK"

POSITIVE_FAMILIES = ("paraphrase", "simplify")
NEGATIVE_FAMILIES = TripleRecord.NEGATIVE_FAMILIES

_AUX_TOKENS = {"is", "are", "was", "were"}
_CONJUNCTIONS = {"and", "or", ","}
_VOWELS = "aeiou"


class AugmentError(ValueError):
    pass


def _load_wordlist(name: str) -> list[str]:
    text = (resources.files("factvc") / "data" / name).read_text(encoding="utf-8")
    out = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            out.append(line)
    return out


@dataclass(frozen=True)
class Lexicons:
    person_pairs: dict[str, str]
    actions: frozenset[str]
    objects: frozenset[str]
    colors: frozenset[str]
    numerals: frozenset[str]
    function_words: frozenset[str]

    @classmethod
    def load_default(cls) -> "Lexicons":
        pairs: dict[str, str] = {}
        for line in _load_wordlist("person_pairs.txt"):
            left, right = line.split("\t")
            if left in pairs or right in pairs:
                raise AugmentError(f"person token appears twice: {left}/{right}")
            pairs[left] = right
            pairs[right] = left
        return cls(
            person_pairs=pairs,
            actions=frozenset(_load_wordlist("actions.txt")),
            objects=frozenset(_load_wordlist("objects.txt")),
            colors=frozenset(_load_wordlist("colors.txt")),
            numerals=frozenset(_load_wordlist("numerals.txt")),
            function_words=frozenset(_load_wordlist("function_words.txt")),
        )

    def is_person(self, token: str) -> bool:
        return token.lower() in self.person_pairs

    def is_action(self, token: str) -> bool:
        return bool(lemma_candidates(token) & self.actions)

    def is_object(self, token: str) -> bool:
        return bool(lemma_candidates(token) & self.objects)

    def is_color(self, token: str) -> bool:
        return token.lower() in self.colors

    def is_numeral(self, token: str) -> bool:
        return token.lower() in self.numerals or token.isdigit()

    def is_content(self, token: str) -> bool:
        return token.isalpha() and token.lower() not in self.function_words


def lemma_candidates(token: str) -> set[str]:
    """Possible base forms of an inflected token, including the token itself."""
    t = token.lower()
    out = {t}
    if t.endswith("ing") and len(t) > 4:
        stem = t[:-3]
        out.add(stem)
        out.add(stem + "e")
        if len(stem) >= 2 and stem[-1] == stem[-2]:
            out.add(stem[:-1])
    if t.endswith("ied") and len(t) > 4:
        out.add(t[:-3] + "y")
    if t.endswith("ed") and len(t) > 3:
        stem = t[:-2]
        out.add(stem)
        out.add(t[:-1])
        if len(stem) >= 2 and stem[-1] == stem[-2]:
            out.add(stem[:-1])
    if t.endswith("ies") and len(t) > 4:
        out.add(t[:-3] + "y")
    if t.endswith("es") and len(t) > 3:
        out.add(t[:-2])
    if t.endswith("s") and len(t) > 2 and not t.endswith("ss"):
        out.add(t[:-1])
    return out


def _cvc_doubles(base: str) -> bool:
    return (
        len(base) >= 3
        and base[-1] not in _VOWELS + "wxy"
        and base[-1].isalpha()
        and base[-2] in _VOWELS
        and base[-3] not in _VOWELS
    )


def participle(base: str) -> str:
    if base.endswith("ee"):
        return base + "ing"
    if base.endswith("e") and len(base) > 2:
        return base[:-1] + "ing"
    if _cvc_doubles(base):
        return base + base[-1] + "ing"
    return base + "ing"


def third_person(base: str) -> str:
    if base.endswith(("s", "sh", "ch", "x", "z", "o")):
        return base + "es"
    if base.endswith("y") and len(base) > 1 and base[-2] not in _VOWELS:
        return base[:-1] + "ies"
    return base + "s"


def past_tense(base: str) -> str:
    if base.endswith("e"):
        return base + "d"
    if base.endswith("y") and len(base) > 1 and base[-2] not in _VOWELS:
        return base[:-1] + "ied"
    if _cvc_doubles(base):
        return base + base[-1] + "ed"
    return base + "ed"


def pluralize(base: str) -> str:
    if base.endswith(("s", "sh", "ch", "x", "z")):
        return base + "es"
    if base.endswith("y") and len(base) > 1 and base[-2] not in _VOWELS:
        return base[:-1] + "ies"
    return base + "s"


def match_case(replacement: str, original: str) -> str:
    if original.isupper() and len(original) > 1:
        return replacement.upper()
    if original[:1].isupper():
        return replacement.capitalize()
    return replacement


def _match_inflection(base: str, template_token: str) -> str:
    t = template_token.lower()
    if t.endswith("ing"):
        return participle(base)
    if t.endswith("ed"):
        return past_tense(base)
    if t.endswith("s") and not t.endswith("ss"):
        return third_person(base)
    return base


# ---------------------------------------------------------------------------
# Negative transforms: tokens -> tokens | None
# ---------------------------------------------------------------------------


def person_swap(tokens: list[str], lex: Lexicons, rng=None) -> list[str] | None:
    """Replace every paired person word by its counterpart."""
    out = []
    changed = False
    for tok in tokens:
        counterpart = lex.person_pairs.get(tok.lower())
        if counterpart is None:
            out.append(tok)
        else:
            out.append(match_case(counterpart, tok))
            changed = True
    return out if changed else None


def _foreign_action(tokens: list[str], lex: Lexicons, rng: np.random.Generator) -> str | None:
    present = set()
    for tok in tokens:
        present |= lemma_candidates(tok)
    candidates = sorted(lex.actions - present)
    if not candidates:
        return None
    return str(rng.choice(candidates))


def action_swap(
    tokens: list[str], lex: Lexicons, rng: np.random.Generator, mode: str | None = None
) -> list[str] | None:
    """Delete one action (with a dangling conjunction) or insert a foreign one.

    A sentence with no action token falls back to insertion regardless of
    mode: a participle goes in right after the subject region (the leading
    tokens up to the first person or object word).
    """
    positions = [i for i, t in enumerate(tokens) if lex.is_action(t)]
    if mode is None:
        mode = str(rng.choice(["delete", "insert"]))
    if mode not in ("delete", "insert"):
        raise AugmentError(f"unknown action_swap mode '{mode}'")

    if not positions:
        if not tokens:
            return None
        new_action = _foreign_action(tokens, lex, rng)
        if new_action is None:
            return None
        subject_end = next(
            (i + 1 for i, t in enumerate(tokens) if lex.is_person(t) or lex.is_object(t)),
            1,
        )
        return tokens[:subject_end] + [participle(new_action)] + tokens[subject_end:]

    if mode == "delete":
        i = int(rng.choice(positions))
        lo, hi = i, i + 1
        if i > 0 and tokens[i - 1].lower() in _CONJUNCTIONS:
            lo = i - 1
        elif i + 1 < len(tokens) and tokens[i + 1].lower() in _CONJUNCTIONS:
            hi = i + 2
        out = tokens[:lo] + tokens[hi:]
        return out if out and out != tokens else None

    i = int(rng.choice(positions))
    new_action = _foreign_action(tokens, lex, rng)
    if new_action is None:
        return None
    inflected = _match_inflection(new_action, tokens[i])
    return tokens[:i] + [match_case(inflected, tokens[i]), "and"] + [tokens[i].lower()] + tokens[i + 1 :]


def object_swap(
    tokens: list[str], lex: Lexicons, rng: np.random.Generator
) -> list[str] | None:
    """Replace one object noun by a different one, keeping number and case."""
    positions = [i for i, t in enumerate(tokens) if lex.is_object(t)]
    if not positions:
        return None
    i = int(rng.choice(positions))
    original = tokens[i]
    original_lemmas = lemma_candidates(original)
    plural = original.lower() not in lex.objects
    candidates = sorted(lex.objects - original_lemmas)
    if not candidates:
        return None
    replacement = str(rng.choice(candidates))
    if plural and not replacement.endswith("s"):
        replacement = pluralize(replacement)
    return tokens[:i] + [match_case(replacement, original)] + tokens[i + 1 :]


def adjective_swap(
    tokens: list[str], lex: Lexicons, rng: np.random.Generator
) -> list[str] | None:
    """Replace one color or numeral by a different member of its class."""
    positions = [
        i for i, t in enumerate(tokens) if lex.is_color(t) or lex.is_numeral(t)
    ]
    if not positions:
        return None
    i = int(rng.choice(positions))
    original = tokens[i]
    if lex.is_color(original):
        pool = sorted(lex.colors - {original.lower()})
    elif original.isdigit():
        pool = sorted({str(n) for n in range(1, 21)} - {original}, key=int)
    else:
        pool = sorted(lex.numerals - {original.lower()})
    if not pool:
        return None
    replacement = str(rng.choice(pool))
    return tokens[:i] + [match_case(replacement, original)] + tokens[i + 1 :]


def poor_generation(
    tokens: list[str], lex: Lexicons, rng: np.random.Generator, mode: str | None = None
) -> list[str] | None:
    """Imitate degenerate decoding: an unknown-token hole or a stuttered span.

    "unk" blanks one rng-chosen content token; "redundancy" duplicates a
    2-4 token span in place. Sentences under two tokens return None; a
    sentence with no content token falls back to redundancy so any sentence
    of two or more tokens is corruptible.
    """
    if mode is None:
        mode = str(rng.choice(["unk", "redundancy"]))
    if mode not in ("unk", "redundancy"):
        raise AugmentError(f"unknown poor_generation mode '{mode}'")
    if len(tokens) < 2:
        return None

    if mode == "unk":
        content = [
            i for i, t in enumerate(tokens) if lex.is_content(t) and t != UNK_TOKEN
        ]
        if content:
            i = int(rng.choice(content))
            return tokens[:i] + [UNK_TOKEN] + tokens[i + 1 :]

    span = int(rng.integers(2, 5))
    span = min(span, len(tokens))
    start = int(rng.integers(0, len(tokens) - span + 1))
    return tokens[: start + span] + tokens[start : start + span] + tokens[start + span :]


# ---------------------------------------------------------------------------
# Positive transforms
# ---------------------------------------------------------------------------


class Translator(Protocol):
    def translate(self, texts: list[str], source: str, target: str) -> list[str]: ...


class StubTranslator:
    """Table-backed translator for tests and offline demos.

    The table maps ``"src->tgt"`` to ``{text: translation}``; texts missing
    from the table pass through unchanged.
    """

    def __init__(self, table: dict[str, dict[str, str]]):
        self.table = table

    @classmethod
    def from_file(cls, path: str | Path) -> "StubTranslator":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def translate(self, texts: list[str], source: str, target: str) -> list[str]:
        mapping = self.table.get(f"{source}->{target}", {})
        return [mapping.get(t, t) for t in texts]


class HttpTranslator:
    """Client for a machine-translation HTTP service.

    ``POST {base_url}/translate`` with ``{"texts", "source", "target"}`` must
    return ``{"translations": [...]}``. The endpoint comes from the
    ``FACTVC_MT_URL`` environment variable and an optional bearer token from
    ``FACTVC_MT_KEY``.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        *,
        timeout: float = 60.0,
        retries: int = 2,
        backoff_s: float = 0.2,
        delay_s: float = 0.0,
        transport: httpx.BaseTransport | None = None,
    ):
        headers = {}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self.retries = retries
        self.backoff_s = backoff_s
        self.delay_s = delay_s
        self._client = httpx.Client(
            base_url=base_url, timeout=timeout, headers=headers, transport=transport
        )

    @classmethod
    def from_env(cls, **kwargs) -> "HttpTranslator":
        url = os.environ.get("FACTVC_MT_URL")
        if not url:
            raise AugmentError("FACTVC_MT_URL is not set; no translation service configured")
        return cls(url, api_key=os.environ.get("FACTVC_MT_KEY"), **kwargs)

    def close(self):
        self._client.close()

    def translate(self, texts: list[str], source: str, target: str) -> list[str]:
        payload = {"texts": texts, "source": source, "target": target}
        last_error = None
        if self.delay_s:
            time.sleep(self.delay_s)
        for attempt in range(self.retries + 1):
            if attempt and self.backoff_s:
                time.sleep(self.backoff_s * attempt)
            try:
                response = self._client.post("/translate", json=payload)
            except httpx.TransportError as exc:
                last_error = str(exc)
                continue
            if response.status_code >= 500:
                last_error = f"HTTP {response.status_code}"
                continue
            if response.status_code != 200:
                raise AugmentError(
                    f"translation failed: HTTP {response.status_code}: {response.text[:200]}"
                )
            translations = response.json().get("translations")
            if not isinstance(translations, list) or len(translations) != len(texts):
                raise AugmentError("translation response malformed")
            return [str(t) for t in translations]
        raise AugmentError(
            f"translation failed after {self.retries + 1} attempts: {last_error}"
        )


def paraphrase(
    text: str, translator: Translator, pivots: tuple[str, ...] = ("de", "fr")
) -> str | None:
    """Round-trip the text through pivot languages; first changed result wins."""
    canonical = detokenize(tokenize(text))
    for pivot in pivots:
        forward = translator.translate([text], "en", pivot)[0]
        back = translator.translate([forward], pivot, "en")[0]
        back = detokenize(tokenize(back))
        if back and back != canonical:
            return back
    return None


def _capitalized(tokens: list[str]) -> list[str]:
    out = list(tokens)
    for i, tok in enumerate(out):
        if tok[:1].isalpha():
            out[i] = tok[0].upper() + tok[1:]
            break
    return out


def simplify(tokens: list[str], lex: Lexicons) -> list[list[str]]:
    """Split a compound sentence into two simpler ones at a conjunction.

    Applies when an "and"/"or" has action words on both sides. If the second
    clause has no subject of its own (no person or object word before its
    first action), the first clause's subject tokens are copied over. A
    sentence with no split point passes through unchanged as a singleton.
    """
    body = list(tokens)
    terminal = []
    while body and body[-1] in {".", "!", "?"}:
        terminal.append(body.pop())
    if not body:
        return [list(tokens)]

    split_at = None
    for i, tok in enumerate(body):
        if tok.lower() not in ("and", "or"):
            continue
        left, right = body[:i], body[i + 1 :]
        if any(lex.is_action(t) for t in left) and any(lex.is_action(t) for t in right):
            split_at = i
            break
    if split_at is None:
        return [list(tokens)]

    left = body[:split_at]
    right = body[split_at + 1 :]
    while left and left[-1] == ",":
        left.pop()

    first_action_left = next(
        (i for i, t in enumerate(left) if lex.is_action(t) or t.lower() in _AUX_TOKENS),
        None,
    )
    subject = left[:first_action_left] if first_action_left else []
    first_action_right = next((i for i, t in enumerate(right) if lex.is_action(t)), 0)
    right_has_subject = any(
        lex.is_object(t) or lex.is_person(t) for t in right[:first_action_right]
    )
    if subject and not right_has_subject:
        head = [t.lower() if i == 0 else t for i, t in enumerate(subject)]
        if right[0].lower() not in _AUX_TOKENS and first_action_left is not None:
            aux = left[first_action_left]
            if aux.lower() in _AUX_TOKENS and right[0].lower().endswith("ing"):
                head = head + [aux.lower()]
        right = head + right

    stop = ["."] if not terminal else [terminal[-1]]
    return [_capitalized(left) + stop, _capitalized(right) + stop]


# ---------------------------------------------------------------------------
# Triple generation
# ---------------------------------------------------------------------------


@dataclass
class AugmentConfig:
    seed: int = 0
    pivots: tuple[str, ...] = ("de", "fr")
    positive_families: tuple[str, ...] = POSITIVE_FAMILIES
    negative_families: tuple[str, ...] = NEGATIVE_FAMILIES
    action_mode: str | None = None  # force "delete" or "insert"
    poor_mode: str | None = None  # force "unk" or "redundancy"

    def validate(self):
        for family in self.positive_families:
            if family not in POSITIVE_FAMILIES:
                raise AugmentError(f"unknown positive family '{family}'")
        for family in self.negative_families:
            if family not in NEGATIVE_FAMILIES:
                raise AugmentError(f"unknown negative family '{family}'")


def _child_rng(seed: int, *parts) -> np.random.Generator:
    tag = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(f"{seed}|{tag}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def apply_negative(
    family: str,
    tokens: list[str],
    lex: Lexicons,
    rng: np.random.Generator,
    config: AugmentConfig | None = None,
) -> list[str] | None:
    config = config or AugmentConfig()
    if family == "person_swap":
        return person_swap(tokens, lex, rng)
    if family == "action_swap":
        return action_swap(tokens, lex, rng, mode=config.action_mode)
    if family == "object_swap":
        return object_swap(tokens, lex, rng)
    if family == "adjective_swap":
        return adjective_swap(tokens, lex, rng)
    if family == "poor_generation":
        return poor_generation(tokens, lex, rng, mode=config.poor_mode)
    raise AugmentError(f"unknown negative family '{family}'")


def generate_triples(
    corpus: Corpus,
    model_id: str,
    *,
    lexicons: Lexicons | None = None,
    translator: Translator | None = None,
    config: AugmentConfig | None = None,
) -> list[TripleRecord]:
    """Build contrastive triples from one model's captions, one per
    (sentence, positive variant, negative family) combination that applies."""
    lex = lexicons or Lexicons.load_default()
    config = config or AugmentConfig()
    config.validate()

    docs = sorted(corpus.captions_for_model(model_id), key=lambda d: d.video_id)
    if not docs:
        raise CorpusError(f"no captions for model '{model_id}'")

    log = logging.getLogger(__name__)
    triples: list[TripleRecord] = []
    for doc in docs:
        for clip_index, sent in enumerate(doc.sentences):
            base_text = detokenize(sent.tokens)
            positives: list[tuple[str, list[str]]] = [(base_text, [])]

            if "paraphrase" in config.positive_families and translator is not None:
                try:
                    rewritten = paraphrase(base_text, translator, config.pivots)
                except AugmentError as exc:
                    log.warning(
                        "paraphrase skipped for %s clip %d: %s",
                        doc.video_id,
                        clip_index,
                        exc,
                    )
                    rewritten = None
                if rewritten is not None:
                    positives.append((rewritten, ["paraphrase"]))
            if "simplify" in config.positive_families:
                clauses = simplify(sent.tokens, lex)
                if len(clauses) > 1:
                    joined = detokenize([t for clause in clauses for t in clause])
                    positives.append((joined, ["simplify"]))

            for pos_text, pos_transforms in positives:
                pos_tokens = tokenize(pos_text)
                for family in config.negative_families:
                    rng = _child_rng(
                        config.seed, doc.video_id, clip_index, family, *pos_transforms
                    )
                    neg_tokens = apply_negative(family, pos_tokens, lex, rng, config)
                    if neg_tokens is None or neg_tokens == pos_tokens:
                        continue
                    triples.append(
                        TripleRecord(
                            video_id=doc.video_id,
                            clip_index=clip_index,
                            positive=pos_text,
                            negative=detokenize(neg_tokens),
                            positive_transforms=pos_transforms,
                            negative_transform=family,
                        )
                    )
    return triples


def split_train_val(
    triples: list[TripleRecord], val_fraction: float = 0.1
) -> tuple[list[TripleRecord], list[TripleRecord]]:
    """Split by video so no video contributes to both sides; the lexically
    last fraction of video ids becomes validation."""
    if not 0 < val_fraction < 1:
        raise AugmentError(f"val_fraction must be in (0, 1), got {val_fraction}")
    if not triples:
        raise AugmentError("no triples to split")
    video_ids = sorted({t.video_id for t in triples})
    n_val = max(1, round(len(video_ids) * val_fraction))
    if n_val >= len(video_ids):
        n_val = len(video_ids) - 1
    if n_val < 1:
        raise AugmentError("need triples from at least two videos to split")
    val_ids = set(video_ids[-n_val:])
    train = [t for t in triples if t.video_id not in val_ids]
    val = [t for t in triples if t.video_id in val_ids]
    return train, val
