"""Lexicon-constrained beam-search decoder.

One-pass, frame-synchronous search over raw acoustic scores. A hypothesis
is a position in the lexicon trie plus a language model state and the label
emitted at the previous frame; hypotheses that agree on all three are
merged, either by logadd (the returned score then aggregates every letter
alignment of the same transcription) or by max (pure Viterbi).

The total score of a complete transcription is

    aggregate over letter paths of (emission + transition scores)
    + lm_weight * ln P_lm(words)                    [alpha]
    + silence_penalty * number of silence units     [gamma]
    + word_penalty * number of words                [beta]

Words must be separated by at least one silence frame; a word is committed
to the language model when a terminal trie node is followed by silence or
by the end of the utterance. Each trie node carries a smearing score (the
best unigram score below it) that is added to in-flight hypotheses for
pruning and replaced by the true LM score when the word commits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .criterion import LetterDict, TransitionTable, logadd
from .lm import EOS, LOG10_TO_LN, NGramLM


class DecodeError(ValueError):
    pass


@dataclass
class Lexicon:
    """Decoding vocabulary: parallel lists of words and grapheme-id spellings."""

    words: list[str]
    spellings: list[list[int]]

    def __post_init__(self):
        if len(self.words) != len(self.spellings):
            raise ValueError("words and spellings must be parallel lists")
        if not self.words:
            raise ValueError("empty lexicon")

    @classmethod
    def from_words(cls, words, letter_dict: LetterDict) -> "Lexicon":
        """Spell each word with the repetition encoding."""
        from .criterion import encode_repetitions

        seen = {}
        out_words, out_spellings = [], []
        for w in words:
            w = w.lower()
            if w in seen:
                continue
            seen[w] = True
            out_words.append(w)
            out_spellings.append(letter_dict.encode(encode_repetitions(w)))
        return cls(out_words, out_spellings)

    @classmethod
    def load(cls, path, letter_dict: LetterDict) -> "Lexicon":
        """Read `word TAB grapheme grapheme ...` lines."""
        words, spellings = [], []
        seen = set()
        with open(path, "r", encoding="utf-8") as f:
            for line_no, raw in enumerate(f, 1):
                line = raw.strip()
                if not line:
                    continue
                parts = line.split(None, 1)
                if len(parts) != 2:
                    raise ValueError(f"{path}: line {line_no}: expected 'word graphemes...'")
                word, graphemes = parts[0].lower(), parts[1].split()
                spelling = [letter_dict.index(g) for g in graphemes]
                key = (word, tuple(spelling))
                if key in seen:
                    continue
                seen.add(key)
                words.append(word)
                spellings.append(spelling)
        return cls(words, spellings)


class TrieNode:
    __slots__ = ("children", "words", "smear")

    def __init__(self):
        self.children: dict[int, TrieNode] = {}
        self.words: list[int] = []
        self.smear: float = -math.inf


@dataclass
class LexiconTrie:
    root: TrieNode
    word_scores: list[float]  # natural-log unigram score per lexicon entry
    has_adjacent_repeats: bool


def build_trie(lexicon: Lexicon, lm: NGramLM, smear_mode: str = "max",
               letter_dict: LetterDict | None = None) -> LexiconTrie:
    """Build the spelling trie and smear unigram scores up it.

    Each node's smear aggregates (max by default, logadd optionally) the
    unigram LM scores of every word at or below it, in natural log. Words
    missing from the LM take the <unk> score.
    """
    if smear_mode not in ("max", "logadd"):
        raise ValueError(f"unknown smear mode {smear_mode!r}")
    if letter_dict is None:
        letter_dict = LetterDict()
    sil = letter_dict.silence_id

    word_scores = []
    for w in lexicon.words:
        _, lp = lm.score_word((), w)
        word_scores.append(lp * LOG10_TO_LN)

    root = TrieNode()
    repeats = False
    for wid, spelling in enumerate(lexicon.spellings):
        if not spelling:
            raise ValueError(f"word {lexicon.words[wid]!r} has an empty spelling")
        if sil in spelling:
            raise ValueError(
                f"word {lexicon.words[wid]!r} uses the silence symbol in its spelling"
            )
        node = root
        prev = None
        for g in spelling:
            if g == prev:
                repeats = True
            if g not in node.children:
                node.children[g] = TrieNode()
            node = node.children[g]
            prev = g
        node.words.append(wid)

    def smear(node: TrieNode) -> float:
        scores = [word_scores[w] for w in node.words]
        scores.extend(smear(child) for child in node.children.values())
        if smear_mode == "max":
            node.smear = max(scores)
        else:
            node.smear = float(np.logaddexp.reduce(scores))
        return node.smear

    smear(root)
    return LexiconTrie(root, word_scores, repeats)


@dataclass
class DecoderParams:
    """Search hyperparameters; alpha, beta, gamma weight the LM score,
    word insertions, and silence insertions respectively."""

    alpha: float = 1.0
    beta: float = 0.0
    gamma: float = 0.0
    beam_size: int = 250
    beam_threshold: float = 25.0
    merge_mode: str = "logadd"

    def validate(self) -> None:
        if self.beam_size < 1:
            raise ValueError("beam_size must be at least 1")
        if not self.beam_threshold > 0:
            raise ValueError("beam_threshold must be positive")
        if self.merge_mode not in ("logadd", "max"):
            raise ValueError(f"unknown merge mode {self.merge_mode!r}")


@dataclass
class Hypothesis:
    """One merged search state.

    ``score`` includes the smearing lookahead of the current trie node;
    ``word`` is the word committed on the step that created this
    hypothesis, if any, and ``frame`` the step index.
    """

    lm_state: tuple
    node: TrieNode
    last_label: int
    score: float
    n_silences: int
    frame: int
    parent: "Hypothesis | None" = None
    word: str | None = None


def prune(beam: list[Hypothesis], params: DecoderParams) -> list[Hypothesis]:
    """Drop hypotheses below best - beam_threshold, then keep the top
    beam_size by score; ties keep earlier-inserted hypotheses."""
    if not beam:
        return []
    best = max(h.score for h in beam)
    kept = [h for h in beam if h.score >= best - params.beam_threshold]
    if len(kept) > params.beam_size:
        ranked = sorted(range(len(kept)), key=lambda i: -kept[i].score)[: params.beam_size]
        kept = [kept[i] for i in sorted(ranked)]
    return kept


@dataclass
class DecodeResult:
    words: tuple[str, ...]
    score: float
    spans: tuple[tuple[int, int], ...]

    @property
    def text(self) -> str:
        return " ".join(self.words)


def traceback(hyp: Hypothesis, n_frames: int):
    """Committed word sequence and per-word frame spans.

    Span k runs from the frame after the previous word's commit to word k's
    commit frame; the last word's span extends to the final frame, so the
    spans partition [0, n_frames) whenever any word was emitted.
    """
    events = []
    h = hyp
    while h is not None:
        if h.word is not None:
            events.append((h.frame, h.word))
        h = h.parent
    events.reverse()
    words = tuple(w for _, w in events)
    spans = []
    prev = -1
    for k, (frame, _) in enumerate(events):
        end = n_frames - 1 if k == len(events) - 1 else frame
        spans.append((prev + 1, end))
        prev = frame
    return words, tuple(spans)


class _Candidates:
    """Per-frame merge table keyed by (lm_state, trie node, last label)."""

    def __init__(self, merge_mode: str):
        self.logadd = merge_mode == "logadd"
        self.table: dict = {}

    def add(self, key, score, n_silences, parent, word, frame):
        cur = self.table.get(key)
        if cur is None:
            self.table[key] = [score, score, n_silences, parent, word, frame]
            return
        cur[0] = logadd(cur[0], score) if self.logadd else max(cur[0], score)
        if score > cur[1]:
            cur[1], cur[2], cur[3], cur[4], cur[5] = score, n_silences, parent, word, frame

    def hypotheses(self) -> list[Hypothesis]:
        out = []
        for (lm_state, node, last_label), rec in self.table.items():
            out.append(
                Hypothesis(
                    lm_state=lm_state,
                    node=node,
                    last_label=last_label,
                    score=rec[0],
                    n_silences=rec[2],
                    parent=rec[3],
                    word=rec[4],
                    frame=rec[5],
                )
            )
        return out


def beam_search(
    emissions,
    transitions: TransitionTable | None,
    lm: NGramLM,
    lexicon: Lexicon,
    trie: LexiconTrie,
    params: DecoderParams,
    mode: str = "asg",
    letter_dict: LetterDict | None = None,
    nbest: int = 1,
) -> list[DecodeResult]:
    """Decode one utterance; returns up to nbest results, best first.

    ``mode`` selects the frame-collapse semantics: "asg" uses letter
    transition scores and treats repeated frames as one emission, "ctc"
    adds a blank label (the last emission column) that separates repeats
    and carries no lexicon or LM effect.
    """
    params.validate()
    if letter_dict is None:
        letter_dict = LetterDict()
    e = np.asarray(emissions, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] == 0:
        raise DecodeError("empty emissions")
    t_count, width = e.shape
    sil = letter_dict.silence_id
    if mode == "asg":
        if width != len(letter_dict):
            raise DecodeError(f"expected {len(letter_dict)} emission columns, got {width}")
        if transitions is None:
            raise DecodeError("asg decoding requires a transition table")
        if trie.has_adjacent_repeats:
            raise DecodeError(
                "lexicon has adjacent repeated graphemes; apply the repetition encoding"
            )
        trans = np.asarray(transitions.trans, dtype=np.float64)
        start = np.asarray(transitions.start, dtype=np.float64)
        blank = None
    elif mode == "ctc":
        if width != len(letter_dict) + 1:
            raise DecodeError(
                f"expected {len(letter_dict) + 1} emission columns (last is blank), got {width}"
            )
        trans = None
        start = np.zeros(width)
        blank = width - 1
    else:
        raise DecodeError(f"unknown decoder mode {mode!r}")

    alpha, beta, gamma = params.alpha, params.beta, params.gamma
    root = trie.root
    lm0 = lm.begin_state()

    def lm_step(state, wid):
        nxt, lp = lm.score_word(state, lexicon.words[wid])
        return nxt, lp * LOG10_TO_LN

    # Scores carry alpha * smear(node) as an in-word lookahead; entering a
    # node adds the smear delta and committing a word swaps the node smear
    # for the true LM score. Every live hypothesis therefore includes
    # alpha * smear(root) once, which finalization removes.
    cands = _Candidates(params.merge_mode)
    base = alpha * root.smear
    cands.add((lm0, root, sil), e[0, sil] + start[sil] + gamma + base, 1, None, None, 0)
    for g, child in root.children.items():
        cands.add(
            (lm0, child, g),
            e[0, g] + start[g] + alpha * child.smear,
            0,
            None,
            None,
            0,
        )
    if blank is not None:
        cands.add((lm0, root, blank), e[0, blank] + base, 0, None, None, 0)
    beam = prune(cands.hypotheses(), params)

    for t in range(1, t_count):
        cands = _Candidates(params.merge_mode)
        for h in beam:
            st, node, last = h.lm_state, h.node, h.last_label
            tr_row = trans[last] if trans is not None else None

            def step(label):
                return e[t, label] + (tr_row[label] if tr_row is not None else 0.0)

            # Stay on the current label (same trie position or silence).
            cands.add((st, node, last), h.score + step(last), h.n_silences, h.parent, h.word, h.frame)

            if blank is not None and last != blank:
                cands.add((st, node, blank), h.score + e[t, blank], h.n_silences, h.parent, h.word, h.frame)

            for g, child in node.children.items():
                if g == last and blank is None:
                    continue  # indistinguishable from staying; unreachable after validation
                if blank is not None and g == last:
                    continue  # a repeated grapheme needs a blank in between
                cands.add(
                    (st, child, g),
                    h.score + step(g) + alpha * (child.smear - node.smear),
                    h.n_silences,
                    h.parent,
                    h.word,
                    h.frame,
                )

            if node.words and last != sil:
                # Terminal node followed by silence: commit each word there.
                for wid in node.words:
                    nst, lp = lm_step(st, wid)
                    cands.add(
                        (nst, root, sil),
                        h.score + step(sil) + gamma + beta + alpha * (lp + root.smear - node.smear),
                        h.n_silences + 1,
                        h,
                        lexicon.words[wid],
                        t,
                    )
            elif node is root and blank is not None and last == blank:
                # Silence after a blank starts a new silence unit.
                cands.add((st, root, sil), h.score + e[t, sil] + gamma, h.n_silences + 1, h.parent, h.word, h.frame)

        beam = prune(cands.hypotheses(), params)

    # Finalization: hypotheses must sit at the root in silence (or on a
    # blank) or on a terminal node, whose words commit without a silence
    # frame. Everything gets the end-of-sentence LM score and sheds the
    # root smear lookahead.
    finals: dict[tuple, list] = {}
    use_logadd = params.merge_mode == "logadd"

    def add_final(words_key, score, hyp_for_trace):
        cur = finals.get(words_key)
        if cur is None:
            finals[words_key] = [score, score, hyp_for_trace]
            return
        cur[0] = logadd(cur[0], score) if use_logadd else max(cur[0], score)
        if score > cur[1]:
            cur[1], cur[2] = score, hyp_for_trace

    for h in beam:
        if h.node is root and (h.last_label == sil or (blank is not None and h.last_label == blank)):
            _, eos_lp = lm.score_word(h.lm_state, EOS)
            score = h.score + alpha * (eos_lp * LOG10_TO_LN - root.smear)
            words, _ = traceback(h, t_count)
            add_final(words, score, h)
        elif h.node.words:
            for wid in h.node.words:
                nst, lp = lm_step(h.lm_state, wid)
                _, eos_lp = lm.score_word(nst, EOS)
                score = (
                    h.score
                    + beta
                    + alpha * (lp - h.node.smear)
                    + alpha * eos_lp * LOG10_TO_LN
                )
                final_hyp = Hypothesis(
                    lm_state=nst,
                    node=root,
                    last_label=h.last_label,
                    score=score,
                    n_silences=h.n_silences,
                    frame=t_count - 1,
                    parent=h,
                    word=lexicon.words[wid],
                )
                words, _ = traceback(final_hyp, t_count)
                add_final(words, score, final_hyp)

    if not finals:
        raise DecodeError(
            "no complete hypothesis survived; increase beam_size or beam_threshold"
        )

    results = []
    for words_key, (score, _, hyp) in finals.items():
        _, spans = traceback(hyp, t_count)
        results.append(DecodeResult(words=words_key, score=float(score), spans=spans))
    results.sort(key=lambda r: -r.score)
    return results[:nbest]
