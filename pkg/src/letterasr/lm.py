"""Back-off n-gram language model over words, read from ARPA text.

Scores are base-10 logarithms as stored in the file; callers that work in
natural log multiply by LOG10_TO_LN at their boundary. Scoring follows the
standard back-off recursion: use the longest matching n-gram, otherwise add
the back-off weight of the history and retry with the shortened history.
"""

from __future__ import annotations

import gzip
import io
import math
from dataclasses import dataclass

LOG10_TO_LN = math.log(10.0)

UNK = "<unk>"
BOS = "<s>"
EOS = "</s>"


class ArpaParseError(ValueError):
    """ARPA syntax or consistency error, carrying the 1-based line number."""

    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class MissingUnkError(KeyError):
    """An out-of-vocabulary word was scored and the model has no <unk>."""


@dataclass
class _Entry:
    logp: float
    bow: float  # back-off weight; 0.0 when the file has none


class NGramLM:
    """Parsed ARPA model: per-order tables keyed by word-id tuples."""

    def __init__(self, order: int, words: list[str], tables: list[dict], unk_floor: float | None = None):
        self.order = order
        self.words = words
        self.vocab = {w: i for i, w in enumerate(words)}
        # tables[k] maps k-tuples of word ids to _Entry, for k = 1..order.
        self.tables = tables
        self.unk_id = self.vocab.get(UNK)
        self.unk_floor = unk_floor

    def __len__(self) -> int:
        return len(self.words)

    def word_id(self, word: str) -> int | None:
        return self.vocab.get(word.lower())

    def _table(self, k: int) -> dict:
        return self.tables[k - 1]

    def truncate_state(self, state: tuple) -> tuple:
        """Longest suffix of the history that exists as an n-gram entry."""
        state = tuple(state)[-(self.order - 1):] if self.order > 1 else ()
        while state and state not in self._table(len(state)):
            state = state[1:]
        return state

    def begin_state(self) -> tuple:
        bos = self.vocab.get(BOS)
        if bos is None:
            return ()
        return self.truncate_state((bos,))

    def score_id(self, state: tuple, wid: int) -> float:
        """Back-off score of word id ``wid`` after history ``state``."""
        bow_sum = 0.0
        for m in range(len(state), -1, -1):
            hist = state[len(state) - m:]
            entry = self._table(m + 1).get(hist + (wid,))
            if entry is not None:
                return bow_sum + entry.logp
            if m > 0:
                backoff = self._table(m).get(hist)
                if backoff is not None:
                    bow_sum += backoff.bow
        raise KeyError(f"word id {wid} has no unigram entry")

    def score_word(self, state: tuple, word: str):
        """Returns (next state, log10 probability of the word in context)."""
        wid = self.word_id(word)
        if wid is None:
            if self.unk_id is not None:
                wid = self.unk_id
            elif self.unk_floor is not None:
                return (), self.unk_floor
            else:
                raise MissingUnkError(
                    f"word {word!r} is out of vocabulary and the model has no {UNK}"
                )
        logp = self.score_id(state, wid)
        next_state = self.truncate_state(state + (wid,))
        return next_state, logp

    def score_sentence(self, words) -> float:
        """Sum of stepwise word scores from <s>, finishing with </s>."""
        state = self.begin_state()
        total = 0.0
        for w in words:
            state, lp = self.score_word(state, w)
            total += lp
        _, lp = self.score_word(state, EOS)
        return total + lp

    def perplexity(self, sentences) -> float:
        """10 ** (-mean log10 prob per scored token, counting </s>)."""
        total = 0.0
        tokens = 0
        for sent in sentences:
            total += self.score_sentence(sent)
            tokens += len(sent) + 1
        if tokens == 0:
            raise ValueError("no tokens to score")
        return 10.0 ** (-total / tokens)


def _open_text(source):
    if hasattr(source, "read"):
        return source, False
    path = str(source)
    with open(path, "rb") as probe:
        magic = probe.read(2)
    if magic == b"\x1f\x8b":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8"), True
    return open(path, "r", encoding="utf-8"), True


def parse_arpa(source, unk_floor: float | None = None) -> NGramLM:
    """Parse an ARPA file (path, file object, or gzip file by magic).

    Strict: section counts must match the \\data\\ header, duplicate
    n-grams and positive log probabilities are rejected, every entry of
    order k > 1 must have its length k-1 history present, and the file must
    finish with \\end\\. All errors carry the offending line number.
    """
    stream, owned = _open_text(source)
    try:
        return _parse_lines(stream, unk_floor)
    finally:
        if owned:
            stream.close()


def _parse_lines(stream, unk_floor) -> NGramLM:
    counts: dict[int, int] = {}
    words: list[str] = []
    vocab: dict[str, int] = {}
    tables: list[dict] = []
    current_order = 0
    seen_orders: set[int] = set()
    section_count = 0
    state = "preamble"
    line_no = 0

    def close_section(at_line):
        if current_order and section_count != counts[current_order]:
            raise ArpaParseError(
                f"\\data\\ declares {counts[current_order]} {current_order}-grams "
                f"but section has {section_count}",
                at_line,
            )

    for raw in stream:
        line_no += 1
        line = raw.strip()
        if not line:
            continue

        if state == "preamble":
            if line == "\\data\\":
                state = "counts"
            continue

        if state == "counts":
            if line.startswith("ngram"):
                body = line[len("ngram"):].strip()
                if "=" not in body:
                    raise ArpaParseError(f"malformed count line {line!r}", line_no)
                k_str, _, c_str = body.partition("=")
                try:
                    k, c = int(k_str), int(c_str)
                except ValueError:
                    raise ArpaParseError(f"malformed count line {line!r}", line_no) from None
                if k < 1 or c < 0:
                    raise ArpaParseError(f"invalid count for order {k}", line_no)
                if k in counts:
                    raise ArpaParseError(f"duplicate count for order {k}", line_no)
                counts[k] = c
                continue
            if not counts:
                raise ArpaParseError("no ngram counts after \\data\\", line_no)
            max_order = max(counts)
            tables.extend({} for _ in range(max_order))
            state = "sections"
            # fall through to section handling

        if state == "sections":
            if line == "\\end\\":
                close_section(line_no)
                missing = [k for k, c in sorted(counts.items()) if c > 0 and k not in seen_orders]
                if missing:
                    raise ArpaParseError(
                        f"missing section for declared order(s): {missing}", line_no
                    )
                lm = NGramLM(max(counts), words, tables, unk_floor)
                return lm
            if line.endswith("-grams:") and line.startswith("\\"):
                close_section(line_no)
                try:
                    k = int(line[1:-len("-grams:")])
                except ValueError:
                    raise ArpaParseError(f"malformed section header {line!r}", line_no) from None
                if k not in counts:
                    raise ArpaParseError(f"section for undeclared order {k}", line_no)
                if k in seen_orders:
                    raise ArpaParseError(f"duplicate section for order {k}", line_no)
                if k > 1 and (k - 1) not in seen_orders and counts.get(k - 1, 0) > 0:
                    raise ArpaParseError(
                        f"section for order {k} before order {k - 1}", line_no
                    )
                seen_orders.add(k)
                current_order = k
                section_count = 0
                continue
            if current_order == 0:
                raise ArpaParseError(f"unexpected line outside any section: {line!r}", line_no)

            fields = line.split()
            k = current_order
            max_order = len(tables)
            if len(fields) == k + 1:
                has_bow = False
            elif len(fields) == k + 2:
                has_bow = True
            else:
                raise ArpaParseError(
                    f"expected {k + 1} or {k + 2} fields for a {k}-gram, got {len(fields)}",
                    line_no,
                )
            if has_bow and k == max_order:
                raise ArpaParseError(
                    "back-off weight on a highest-order entry", line_no
                )
            try:
                logp = float(fields[0])
            except ValueError:
                raise ArpaParseError(f"malformed log probability {fields[0]!r}", line_no) from None
            if math.isnan(logp) or logp > 0.0:
                raise ArpaParseError(f"log probability must be <= 0, got {fields[0]}", line_no)
            bow = 0.0
            if has_bow:
                try:
                    bow = float(fields[-1])
                except ValueError:
                    raise ArpaParseError(f"malformed back-off weight {fields[-1]!r}", line_no) from None
                if math.isnan(bow):
                    raise ArpaParseError("back-off weight must be a number", line_no)

            tokens = tuple(t.lower() for t in fields[1 : k + 1])
            ids = []
            for tok in tokens:
                if tok not in vocab:
                    if k > 1:
                        raise ArpaParseError(
                            f"token {tok!r} not introduced by any unigram", line_no
                        )
                    vocab[tok] = len(words)
                    words.append(tok)
                ids.append(vocab[tok])
            key = tuple(ids)
            if key in tables[k - 1]:
                raise ArpaParseError(
                    f"duplicate {k}-gram {' '.join(tokens)!r}", line_no
                )
            if k > 1 and key[:-1] not in tables[k - 2]:
                raise ArpaParseError(
                    f"history of {' '.join(tokens)!r} missing from the {k - 1}-gram section",
                    line_no,
                )
            tables[k - 1][key] = _Entry(logp, bow)
            section_count += 1
            continue

    if state == "preamble":
        raise ArpaParseError("no \\data\\ header found", line_no or 1)
    raise ArpaParseError("file ended without \\end\\", line_no or 1)


def write_arpa(lm: NGramLM, stream) -> None:
    """Serialize back to ARPA text; reparsing yields identical tables.

    Lower-order entries always carry an explicit back-off weight (0 when the
    source had none), highest-order entries never do.
    """
    stream.write("\\data\\\n")
    for k in range(1, lm.order + 1):
        stream.write(f"ngram {k}={len(lm._table(k))}\n")
    for k in range(1, lm.order + 1):
        stream.write(f"\n\\{k}-grams:\n")
        for key, entry in lm._table(k).items():
            toks = " ".join(lm.words[i] for i in key)
            if k < lm.order:
                stream.write(f"{entry.logp:.17g}\t{toks}\t{entry.bow:.17g}\n")
            else:
                stream.write(f"{entry.logp:.17g}\t{toks}\n")
    stream.write("\n\\end\\\n")
