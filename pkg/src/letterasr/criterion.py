"""Sequence criteria over letter lattices.

This module holds the grapheme alphabet (letters, apostrophe, word-boundary
silence, and the repetition symbols that stand in for doubled letters), the
time-unrolled lattices the losses are defined on, and the two training
criteria:

* ``ctc_loss``: negative forward score of a blank-interleaved acceptance
  lattice over per-frame log-softmax scores.
* ``asg_loss``: difference of forward scores between a blank-free acceptance
  lattice and a fully-connected normalization lattice, with learned
  letter-to-letter transition scores shared by both.

Both losses return exact gradients obtained from the forward-backward
recursion. All dynamic programs run in float64 regardless of the caller's
dtype.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

NEG_INF = -np.inf

APOSTROPHE = "'"
SILENCE = "#"
REP_ONCE = "1"
REP_TWICE = "2"

_WORD_CHARS = frozenset("abcdefghijklmnopqrstuvwxyz" + APOSTROPHE)

DEFAULT_GRAPHEMES = tuple("abcdefghijklmnopqrstuvwxyz") + (
    APOSTROPHE,
    SILENCE,
    REP_ONCE,
    REP_TWICE,
)


class LetterDict:
    """Ordered grapheme inventory mapping symbols to contiguous ids.

    The default inventory has 30 entries: the 26 letters, the apostrophe,
    the word-boundary silence symbol, and the two repetition symbols. CTC
    additionally uses an internal blank whose id is ``len(d)`` (one past the
    last grapheme); the blank never appears in transcriptions.
    """

    def __init__(self, graphemes=DEFAULT_GRAPHEMES):
        self.graphemes = list(graphemes)
        if len(set(self.graphemes)) != len(self.graphemes):
            raise ValueError("duplicate graphemes in letter dictionary")
        if not self.graphemes:
            raise ValueError("empty letter dictionary")
        self._index = {g: i for i, g in enumerate(self.graphemes)}

    def __len__(self) -> int:
        return len(self.graphemes)

    def __contains__(self, grapheme: str) -> bool:
        return grapheme in self._index

    def index(self, grapheme: str) -> int:
        try:
            return self._index[grapheme]
        except KeyError:
            raise ValueError(f"grapheme {grapheme!r} not in letter dictionary") from None

    def grapheme(self, idx: int) -> str:
        if not 0 <= idx < len(self.graphemes):
            raise ValueError(f"grapheme id {idx} out of range")
        return self.graphemes[idx]

    @property
    def silence_id(self) -> int:
        return self.index(SILENCE)

    @property
    def blank_id(self) -> int:
        """Id of the CTC blank: one past the last real grapheme."""
        return len(self.graphemes)

    def encode(self, graphemes) -> list[int]:
        return [self.index(g) for g in graphemes]

    def decode(self, ids) -> list[str]:
        return [self.grapheme(i) for i in ids]


def default_letter_dict() -> LetterDict:
    return LetterDict()


def encode_repetitions(word: str) -> list[str]:
    """Rewrite repeated-letter runs using the repetition symbols.

    A run keeps its first letter and encodes the remaining count greedily,
    two at a time: "ll" -> l 1, "lll" -> l 2, "llll" -> l 2 l,
    "lllll" -> l 2 l 1. Words may contain lowercase letters and apostrophes
    only; anything else is an error naming the character.
    """
    out: list[str] = []
    i = 0
    while i < len(word):
        ch = word[i]
        if ch not in _WORD_CHARS:
            raise ValueError(f"unsupported character {ch!r} in word {word!r}")
        run = 1
        while i + run < len(word) and word[i + run] == ch:
            run += 1
        i += run
        while run:
            out.append(ch)
            if run >= 3:
                out.append(REP_TWICE)
                run -= 3
            elif run == 2:
                out.append(REP_ONCE)
                run -= 2
            else:
                run -= 1
    return out


def decode_repetitions(graphemes, strict: bool = True) -> str:
    """Expand repetition symbols back into repeated letters.

    Inverts ``encode_repetitions`` exactly on its outputs. A repetition
    symbol repeats the most recent expanded letter once ("1") or twice
    ("2"). With strict=True a leading repetition symbol is an error; with
    strict=False it is dropped, which is the right behavior for collapsing
    raw greedy-decoded frames.
    """
    out: list[str] = []
    for g in graphemes:
        if g == REP_ONCE or g == REP_TWICE:
            if not out:
                if strict:
                    raise ValueError("repetition symbol with no preceding letter")
                continue
            out.append(out[-1] * (1 if g == REP_ONCE else 2))
        elif g in _WORD_CHARS:
            out.append(g)
        else:
            raise ValueError(f"unsupported grapheme {g!r}")
    return "".join(out)


def normalize_text(text: str) -> str:
    """Lowercase a transcription and drop characters outside the alphabet.

    Whitespace separates words; anything that is not a letter or apostrophe
    is removed (counted at debug level).
    """
    words = []
    dropped = 0
    for raw in text.lower().split():
        kept = "".join(c for c in raw if c in _WORD_CHARS)
        dropped += len(raw) - len(kept)
        if kept:
            words.append(kept)
    if dropped:
        log.debug("dropped %d out-of-alphabet characters from %r", dropped, text)
    return " ".join(words)


def text_to_target(text: str, letter_dict: LetterDict) -> list[int]:
    """Grapheme-id target for a transcription.

    Words are repetition-encoded and separated by the silence symbol.
    """
    ids: list[int] = []
    for j, word in enumerate(normalize_text(text).split()):
        if j:
            ids.append(letter_dict.silence_id)
        ids.extend(letter_dict.index(g) for g in encode_repetitions(word))
    return ids


# ---------------------------------------------------------------------------
# Stable log-space arithmetic
# ---------------------------------------------------------------------------


def logadd(a, b):
    """log(exp(a) + exp(b)) computed as max + log1p(exp(-|a - b|)).

    -inf is the additive identity; logadd(-inf, -inf) is -inf.
    """
    a_arr = np.asarray(a, dtype=np.float64)
    b_arr = np.asarray(b, dtype=np.float64)
    m = np.maximum(a_arr, b_arr)
    with np.errstate(invalid="ignore"):
        out = m + np.log1p(np.exp(-np.abs(a_arr - b_arr)))
    out = np.where(np.isneginf(m), NEG_INF, out)
    if np.isscalar(a) and np.isscalar(b):
        return float(out)
    return out


def logadd_fold(values) -> float:
    """n-ary logadd of an iterable of scores."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        return NEG_INF
    return float(logsumexp(arr))


def logsumexp(a, axis=None, keepdims=False):
    """Max-shifted log(sum(exp(a))); rows of all -inf reduce to -inf."""
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    if not keepdims:
        out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())
    if out.ndim == 0:
        return float(out)
    return out


def log_softmax(scores: np.ndarray) -> np.ndarray:
    """Per-row log-softmax; each output row logadds to exactly 0."""
    scores = np.asarray(scores, dtype=np.float64)
    return scores - logsumexp(scores, axis=1, keepdims=True)


def is_normalized(emissions: np.ndarray, tol: float = 1e-8) -> bool:
    """True when every emission row logadds to 0 within tol."""
    row_sums = logsumexp(np.asarray(emissions, dtype=np.float64), axis=1)
    return bool(np.all(np.abs(row_sums) <= tol))


# ---------------------------------------------------------------------------
# Transition scores and lattices
# ---------------------------------------------------------------------------


@dataclass
class TransitionTable:
    """Learned letter-transition scores.

    trans[i, j] scores moving from label i at one frame to label j at the
    next; start[j] scores beginning the utterance in label j. Both are plain
    additive log-space scores, not normalized probabilities.
    """

    trans: np.ndarray
    start: np.ndarray

    def __post_init__(self):
        self.trans = np.asarray(self.trans)
        self.start = np.asarray(self.start)
        if self.trans.ndim != 2 or self.trans.shape[0] != self.trans.shape[1]:
            raise ValueError("transition matrix must be square")
        if self.start.shape != (self.trans.shape[0],):
            raise ValueError("start vector length must match the transition matrix")

    @property
    def n_labels(self) -> int:
        return self.trans.shape[0]

    @classmethod
    def zeros(cls, n_labels: int, dtype=np.float64) -> "TransitionTable":
        return cls(np.zeros((n_labels, n_labels), dtype=dtype), np.zeros(n_labels, dtype=dtype))

    def copy(self) -> "TransitionTable":
        return TransitionTable(self.trans.copy(), self.start.copy())


@dataclass
class CriterionGraph:
    """Time-unrolled label lattice with one shared state set per frame.

    The same states and edges apply between every pair of consecutive
    frames; a path enters at a start state on frame 0, follows one edge per
    frame step, and must sit on a final state at the last frame. Each state
    carries the label whose emission score it collects.
    """

    n_frames: int
    n_labels: int
    labels: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    start_states: np.ndarray
    final_states: np.ndarray
    uses_transitions: bool

    @property
    def n_states(self) -> int:
        return self.labels.size

    @property
    def n_edges(self) -> int:
        return self.edge_src.size


def _as_target(target) -> list[int]:
    ids = [int(t) for t in target]
    return ids


def build_ctc_graph(target, n_frames: int, n_labels: int, blank: int | None = None) -> CriterionGraph:
    """Blank-interleaved acceptance lattice for a target grapheme sequence.

    States alternate blank, target[0], blank, target[1], ..., blank. Every
    state has a self-loop and an edge to its successor; a label state may
    skip the following blank when the next label differs. The minimal path
    length is len(target) plus one frame per adjacent repeated pair; longer
    targets are infeasible.
    """
    target = _as_target(target)
    if not target:
        raise ValueError("empty target")
    if blank is None:
        blank = n_labels - 1
    if not 0 <= blank < n_labels:
        raise ValueError(f"blank id {blank} out of range for {n_labels} labels")
    for t in target:
        if not 0 <= t < n_labels:
            raise ValueError(f"target label {t} out of range for {n_labels} labels")
        if t == blank:
            raise ValueError("target must not contain the blank label")
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    min_len = len(target) + repeats
    if n_frames < min_len:
        raise ValueError(
            f"target longer than input: need at least {min_len} frames, got {n_frames}"
        )

    n_states = 2 * len(target) + 1
    labels = np.empty(n_states, dtype=np.int64)
    labels[0::2] = blank
    labels[1::2] = target

    src, dst = [], []
    # Self-loops first so Viterbi tie-breaking can give them a fixed rank.
    for s in range(n_states):
        src.append(s)
        dst.append(s)
    for s in range(n_states - 1):
        src.append(s)
        dst.append(s + 1)
    for s in range(1, n_states - 2, 2):
        if labels[s] != labels[s + 2]:
            src.append(s)
            dst.append(s + 2)

    return CriterionGraph(
        n_frames=n_frames,
        n_labels=n_labels,
        labels=labels,
        edge_src=np.array(src, dtype=np.int64),
        edge_dst=np.array(dst, dtype=np.int64),
        start_states=np.array([0, 1], dtype=np.int64),
        final_states=np.array([n_states - 1, n_states - 2], dtype=np.int64),
        uses_transitions=False,
    )


def build_asg_graph(target, n_frames: int, n_labels: int) -> CriterionGraph:
    """Blank-free acceptance lattice: one state per target position.

    Paths stay on a position or advance to the next one, so a path is any
    monotone alignment of the frames onto the target. Edges carry the
    learned transition scores for their label pair.
    """
    target = _as_target(target)
    if not target:
        raise ValueError("empty target")
    for t in target:
        if not 0 <= t < n_labels:
            raise ValueError(f"target label {t} out of range for {n_labels} labels")
    if n_frames < len(target):
        raise ValueError(
            f"target longer than input: need at least {len(target)} frames, got {n_frames}"
        )

    n_states = len(target)
    src = list(range(n_states)) + list(range(n_states - 1))
    dst = list(range(n_states)) + list(range(1, n_states))
    return CriterionGraph(
        n_frames=n_frames,
        n_labels=n_labels,
        labels=np.array(target, dtype=np.int64),
        edge_src=np.array(src, dtype=np.int64),
        edge_dst=np.array(dst, dtype=np.int64),
        start_states=np.array([0], dtype=np.int64),
        final_states=np.array([n_states - 1], dtype=np.int64),
        uses_transitions=True,
    )


def build_full_graph(n_labels: int, n_frames: int) -> CriterionGraph:
    """Fully-connected lattice over all labels: the normalization graph.

    Every label is a state, every ordered pair is an edge, and every state
    both starts and accepts, so the forward score sums every length-T label
    sequence.
    """
    if n_labels < 1:
        raise ValueError("need at least one label")
    labels = np.arange(n_labels, dtype=np.int64)
    stay = np.arange(n_labels, dtype=np.int64)
    grid_src, grid_dst = np.meshgrid(labels, labels, indexing="ij")
    off = grid_src != grid_dst
    src = np.concatenate([stay, grid_src[off]])
    dst = np.concatenate([stay, grid_dst[off]])
    return CriterionGraph(
        n_frames=n_frames,
        n_labels=n_labels,
        labels=labels,
        edge_src=src,
        edge_dst=dst,
        start_states=labels.copy(),
        final_states=labels.copy(),
        uses_transitions=True,
    )


# ---------------------------------------------------------------------------
# Forward / backward dynamic programs
# ---------------------------------------------------------------------------


def _check_emissions(graph: CriterionGraph, emissions) -> np.ndarray:
    e = np.asarray(emissions, dtype=np.float64)
    if e.ndim != 2:
        raise ValueError("emissions must be a (frames, labels) array")
    if e.shape[0] != graph.n_frames:
        raise ValueError(f"emissions have {e.shape[0]} frames, graph expects {graph.n_frames}")
    if e.shape[1] != graph.n_labels:
        raise ValueError(f"emissions have {e.shape[1]} labels, graph expects {graph.n_labels}")
    if not np.all(np.isfinite(e)):
        raise ValueError("emissions must be finite")
    return e


def _edge_scores(graph: CriterionGraph, transitions: TransitionTable | None) -> np.ndarray:
    if not graph.uses_transitions:
        return np.zeros(graph.n_edges)
    if transitions is None:
        raise ValueError("graph carries transition scores but none were given")
    if transitions.n_labels != graph.n_labels:
        raise ValueError("transition table size does not match the graph labels")
    trans = np.asarray(transitions.trans, dtype=np.float64)
    return trans[graph.labels[graph.edge_src], graph.labels[graph.edge_dst]]


def _start_scores(graph: CriterionGraph, transitions: TransitionTable | None) -> np.ndarray:
    if not graph.uses_transitions:
        return np.zeros(graph.start_states.size)
    start = np.asarray(transitions.start, dtype=np.float64)
    return start[graph.labels[graph.start_states]]


def _forward_alphas(graph, e, edge_scores, start_scores) -> np.ndarray:
    alpha = np.full((graph.n_frames, graph.n_states), NEG_INF)
    alpha[0, graph.start_states] = e[0, graph.labels[graph.start_states]] + start_scores
    emit = e[:, graph.labels]
    for t in range(1, graph.n_frames):
        acc = np.full(graph.n_states, NEG_INF)
        np.logaddexp.at(acc, graph.edge_dst, alpha[t - 1, graph.edge_src] + edge_scores)
        alpha[t] = acc + emit[t]
    return alpha


def _backward_betas(graph, e, edge_scores) -> np.ndarray:
    beta = np.full((graph.n_frames, graph.n_states), NEG_INF)
    beta[-1, graph.final_states] = 0.0
    emit = e[:, graph.labels]
    for t in range(graph.n_frames - 2, -1, -1):
        contrib = edge_scores + emit[t + 1, graph.edge_dst] + beta[t + 1, graph.edge_dst]
        acc = np.full(graph.n_states, NEG_INF)
        np.logaddexp.at(acc, graph.edge_src, contrib)
        beta[t] = acc
    return beta


def forward_score(graph: CriterionGraph, emissions, transitions: TransitionTable | None = None) -> float:
    """logadd over all accepted paths of emission plus transition scores."""
    e = _check_emissions(graph, emissions)
    edge_scores = _edge_scores(graph, transitions)
    start_scores = _start_scores(graph, transitions)
    alpha = _forward_alphas(graph, e, edge_scores, start_scores)
    return float(logsumexp(alpha[-1, graph.final_states]))


def graph_gradients(graph: CriterionGraph, emissions, transitions: TransitionTable | None = None):
    """Forward score and its gradients via the forward-backward recursion.

    Returns (score, d score / d emissions, d score / d transitions) where the
    transition gradient is a TransitionTable or None for graphs without
    transition scores. Gradients are posteriors: each emission entry's
    gradient is the total posterior mass of states carrying that label at
    that frame, and each transition entry's is the posterior mass of its
    edges summed over frame steps.
    """
    e = _check_emissions(graph, emissions)
    edge_scores = _edge_scores(graph, transitions)
    start_scores = _start_scores(graph, transitions)
    alpha = _forward_alphas(graph, e, edge_scores, start_scores)
    beta = _backward_betas(graph, e, edge_scores)
    score = float(logsumexp(alpha[-1, graph.final_states]))
    if not math.isfinite(score):
        raise ValueError("no accepted path has finite score")

    t_count, s_count = alpha.shape
    post = np.exp(alpha + beta - score)
    de = np.zeros_like(e)
    frame_idx = np.repeat(np.arange(t_count), s_count)
    label_idx = np.tile(graph.labels, t_count)
    np.add.at(de, (frame_idx, label_idx), post.ravel())

    if not graph.uses_transitions:
        return score, de, None

    # Edge posterior at step t: path mass moving src -> dst between t-1 and t.
    lab_dst = graph.labels[graph.edge_dst]
    edge_mass = np.exp(
        alpha[:-1, graph.edge_src]
        + edge_scores[None, :]
        + e[1:, lab_dst]
        + beta[1:, graph.edge_dst]
        - score
    ).sum(axis=0)
    dtrans = np.zeros((graph.n_labels, graph.n_labels))
    np.add.at(dtrans, (graph.labels[graph.edge_src], lab_dst), edge_mass)
    dstart = np.zeros(graph.n_labels)
    start_mass = np.exp(alpha[0, graph.start_states] + beta[0, graph.start_states] - score)
    np.add.at(dstart, graph.labels[graph.start_states], start_mass)
    return score, de, TransitionTable(dtrans, dstart)


def _full_graph_gradients(e: np.ndarray, transitions: TransitionTable):
    """Dense forward-backward over the fully-connected lattice.

    Equivalent to graph_gradients(build_full_graph(...), ...) but runs on
    (labels x labels) matrix recursions, which is what the training loop
    needs for the normalization term.
    """
    t_count, n = e.shape
    trans = np.asarray(transitions.trans, dtype=np.float64)
    start = np.asarray(transitions.start, dtype=np.float64)

    alpha = np.empty((t_count, n))
    alpha[0] = e[0] + start
    for t in range(1, t_count):
        alpha[t] = e[t] + logsumexp(alpha[t - 1][:, None] + trans, axis=0)
    beta = np.empty((t_count, n))
    beta[-1] = 0.0
    for t in range(t_count - 2, -1, -1):
        beta[t] = logsumexp(trans + (e[t + 1] + beta[t + 1])[None, :], axis=1)

    score = float(logsumexp(alpha[-1]))
    de = np.exp(alpha + beta - score)
    dstart = de[0].copy()
    if t_count > 1:
        steps = (
            alpha[:-1, :, None]
            + trans[None, :, :]
            + (e[1:] + beta[1:])[:, None, :]
            - score
        )
        dtrans = np.exp(steps).sum(axis=0)
    else:
        dtrans = np.zeros_like(trans)
    return score, de, TransitionTable(dtrans, dstart)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def ctc_loss(emissions, target, blank: int | None = None):
    """CTC loss and its gradient with respect to the raw scores.

    The raw scores are log-softmax normalized per frame inside this
    function; the loss is the negative forward score of the blank-interleaved
    acceptance lattice over the normalized scores, and the returned gradient
    is chained back through the normalization (so each gradient row sums
    to zero).
    """
    raw = np.asarray(emissions, dtype=np.float64)
    if raw.ndim != 2:
        raise ValueError("emissions must be a (frames, labels) array")
    t_count, n_labels = raw.shape
    if blank is None:
        blank = n_labels - 1
    graph = build_ctc_graph(target, t_count, n_labels, blank)
    norm = log_softmax(raw)
    score, dnorm_score, _ = graph_gradients(graph, norm)
    loss = -score
    dnorm = -dnorm_score
    soft = np.exp(norm)
    de = dnorm - soft * dnorm.sum(axis=1, keepdims=True)
    return loss, de


def asg_loss(emissions, transitions: TransitionTable, target):
    """ASG loss and its gradients over raw scores and transition scores.

    loss = -forward(acceptance lattice) + forward(full lattice), both over
    the same unnormalized emissions and shared transition table. Returns
    (loss, d loss / d emissions, d loss / d transitions). With an all-zero
    transition table this equals blank-free CTC: the full-lattice term
    reduces to the per-frame normalizer.
    """
    e = np.asarray(emissions, dtype=np.float64)
    if e.ndim != 2:
        raise ValueError("emissions must be a (frames, labels) array")
    if transitions is None:
        raise ValueError("asg_loss requires a transition table")
    t_count, n_labels = e.shape
    graph = build_asg_graph(target, t_count, n_labels)
    acc_score, acc_de, acc_dtr = graph_gradients(graph, e, transitions)
    full_score, full_de, full_dtr = _full_graph_gradients(e, transitions)
    loss = -acc_score + full_score
    de = -acc_de + full_de
    dtr = TransitionTable(
        -acc_dtr.trans + full_dtr.trans,
        -acc_dtr.start + full_dtr.start,
    )
    return loss, de, dtr


# ---------------------------------------------------------------------------
# Viterbi
# ---------------------------------------------------------------------------


def viterbi_path(graph: CriterionGraph, emissions, transitions: TransitionTable | None = None):
    """Best-scoring accepted path; returns (state sequence, score).

    Score ties at a state are broken toward the incoming edge with the
    smallest source index, which prefers paths that hold each position as
    long as possible (advances happen as late as possible).
    """
    e = _check_emissions(graph, emissions)
    edge_scores = _edge_scores(graph, transitions)
    start_scores = _start_scores(graph, transitions)

    order = np.argsort(graph.edge_src, kind="stable")
    incoming: list[list[int]] = [[] for _ in range(graph.n_states)]
    for eidx in order:
        incoming[graph.edge_dst[eidx]].append(int(eidx))

    t_count = graph.n_frames
    score = np.full(graph.n_states, NEG_INF)
    score[graph.start_states] = e[0, graph.labels[graph.start_states]] + start_scores
    back = np.full((t_count, graph.n_states), -1, dtype=np.int64)
    for t in range(1, t_count):
        new = np.full(graph.n_states, NEG_INF)
        for s in range(graph.n_states):
            best = NEG_INF
            best_src = -1
            for eidx in incoming[s]:
                cand = score[graph.edge_src[eidx]] + edge_scores[eidx]
                if cand > best:
                    best = cand
                    best_src = graph.edge_src[eidx]
            if best_src >= 0:
                new[s] = best + e[t, graph.labels[s]]
                back[t, s] = best_src
        score = new

    finals = graph.final_states
    best_final = finals[0]
    for s in finals[1:]:
        if score[s] > score[best_final]:
            best_final = s
    best_score = float(score[best_final])
    if not math.isfinite(best_score):
        raise ValueError("no accepted path has finite score")

    states = np.empty(t_count, dtype=np.int64)
    states[-1] = best_final
    for t in range(t_count - 1, 0, -1):
        states[t - 1] = back[t, states[t]]
    return states, best_score


def viterbi_align(emissions, transitions, target, mode: str = "asg", blank: int | None = None):
    """Frame-level forced alignment; returns (label ids per frame, score)."""
    e = np.asarray(emissions, dtype=np.float64)
    if e.ndim != 2:
        raise ValueError("emissions must be a (frames, labels) array")
    t_count, n_labels = e.shape
    if mode == "asg":
        graph = build_asg_graph(target, t_count, n_labels)
    elif mode == "ctc":
        graph = build_ctc_graph(target, t_count, n_labels, blank)
        transitions = None
    else:
        raise ValueError(f"unknown criterion mode {mode!r}")
    states, score = viterbi_path(graph, e, transitions)
    return graph.labels[states], score


# ---------------------------------------------------------------------------
# Frame-sequence collapse (shared by greedy decoding)
# ---------------------------------------------------------------------------


def merge_repeats(ids) -> list[int]:
    """Collapse runs of identical labels to single occurrences."""
    out: list[int] = []
    for i in ids:
        i = int(i)
        if not out or out[-1] != i:
            out.append(i)
    return out


def asg_collapse(ids) -> list[int]:
    """Frame labels to grapheme units: merge consecutive repeats."""
    return merge_repeats(ids)


def ctc_collapse(ids, blank: int) -> list[int]:
    """Frame labels to grapheme units: merge repeats, then drop blanks."""
    return [i for i in merge_repeats(ids) if i != blank]


def units_to_words(units, letter_dict: LetterDict) -> list[str]:
    """Split grapheme units on silence and expand repetition symbols.

    Lenient about malformed repetition placement, as raw greedy output can
    put a repetition symbol anywhere.
    """
    words: list[str] = []
    segment: list[str] = []
    sil = letter_dict.silence_id
    for i in units:
        if i == sil:
            if segment:
                words.append(decode_repetitions(segment, strict=False))
                segment = []
        else:
            segment.append(letter_dict.grapheme(int(i)))
    if segment:
        words.append(decode_repetitions(segment, strict=False))
    return [w for w in words if w]
