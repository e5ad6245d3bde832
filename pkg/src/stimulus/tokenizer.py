"""
Deterministic toy subword tokenizer.

Id layout over a fixed vocabulary:
    0..3                      reserved: <pad>, <unk>, <bos>, <sep>
    4..39                     single characters a-z and 0-9
    40..vocab_size-1          hashed pieces (blake2b of the piece text)

Words of up to three characters are one piece; longer words are cut into trigrams, with a
trailing single character folded into the last trigram to make two bigrams. Every word longer
than three characters therefore yields at least two tokens. Word-initial pieces are hashed with
a leading marker so "ing" at the start of a word differs from "ing" inside it.
"""

import hashlib
import string
from typing import Dict, List, Sequence, Tuple

from ..errors import RejectedInputError

PAD_ID = 0
UNK_ID = 1
BOS_ID = 2
SEP_ID = 3
RESERVED = ("<pad>", "<unk>", "<bos>", "<sep>")

SINGLE_CHARS = string.ascii_lowercase + string.digits
ALPHABET = frozenset(SINGLE_CHARS + "'-.,;:!?")
WORD_START = "▁"


def split_pieces(word: str) -> List[str]:
    """Cut a normalized word into bigram/trigram pieces."""
    if len(word) <= 3:
        return [word]
    pieces = [word[i:i + 3] for i in range(0, len(word), 3)]
    if len(pieces[-1]) == 1:
        merged = pieces[-2] + pieces[-1]
        pieces[-2:] = [merged[:2], merged[2:]]
    return pieces


class SubwordTokenizer:
    """Maps word surfaces to token-id sequences over a fixed vocabulary."""

    def __init__(self, vocab_size: int = 512):
        self.first_hashed = len(RESERVED) + len(SINGLE_CHARS)
        if vocab_size <= self.first_hashed:
            raise RejectedInputError(
                f"vocab_size must exceed {self.first_hashed} to leave room for hashed pieces"
            )
        self.vocab_size = vocab_size
        self._char_ids = {c: len(RESERVED) + i for i, c in enumerate(SINGLE_CHARS)}
        self._cache: Dict[str, Tuple[int, ...]] = {}

    def _piece_id(self, piece: str, initial: bool) -> int:
        if any(c not in ALPHABET for c in piece):
            return UNK_ID
        if len(piece) == 1 and piece in self._char_ids:
            return self._char_ids[piece]
        text = (WORD_START + piece) if initial else piece
        digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
        return self.first_hashed + int.from_bytes(digest, "big") % (self.vocab_size - self.first_hashed)

    def tokenize(self, surface: str) -> List[int]:
        """Token ids for one word surface.

        Args:
            surface: Nonempty word text

        Returns:
            One or more token ids
        """
        if not surface or not surface.strip():
            raise RejectedInputError("Cannot tokenize an empty word")
        cached = self._cache.get(surface)
        if cached is None:
            word = surface.strip().lower()
            pieces = split_pieces(word)
            cached = tuple(self._piece_id(p, i == 0) for i, p in enumerate(pieces))
            self._cache[surface] = cached
        return list(cached)

    def tokenize_words(self, surfaces: Sequence[str]) -> Tuple[List[int], List[Tuple[int, int]]]:
        """Tokenize a word sequence, returning ids and each word's [start, end) token span."""
        ids: List[int] = []
        spans: List[Tuple[int, int]] = []
        for surface in surfaces:
            pieces = self.tokenize(surface)
            spans.append((len(ids), len(ids) + len(pieces)))
            ids.extend(pieces)
        return ids, spans
