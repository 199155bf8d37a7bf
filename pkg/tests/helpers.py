"""Independent oracles shared by the test suite.

Everything here recomputes expected values by brute force or from first
principles: explicit path enumeration instead of lattice DP, direct DFT
matrices instead of FFT, triple loops instead of tensordot, central finite
differences instead of backprop. None of it shares machinery with the
package beyond data containers, so agreement is evidence, not tautology.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from letterasr.lm import LOG10_TO_LN


# ---------------------------------------------------------------------------
# Scalar log-domain reference
# ---------------------------------------------------------------------------


def logsumexp_py(values) -> float:
    values = [float(v) for v in values]
    m = max(values)
    if math.isinf(m) and m < 0:
        return float("-inf")
    return m + math.log(sum(math.exp(v - m) for v in values))


# ---------------------------------------------------------------------------
# Path enumeration, readable form (tiny T only)
# ---------------------------------------------------------------------------


def merge_repeats_py(path):
    out = []
    for label in path:
        if not out or out[-1] != label:
            out.append(label)
    return tuple(out)


def ctc_collapse_py(path, blank):
    return tuple(u for u in merge_repeats_py(path) if u != blank)


def iter_paths(n_labels: int, t: int):
    return itertools.product(range(n_labels), repeat=t)


def paths_for_target(target, t, n_labels, mode, blank=None):
    """All label paths of length t whose collapse equals target."""
    target = tuple(int(v) for v in target)
    keep = []
    for path in iter_paths(n_labels, t):
        if mode == "ctc":
            if ctc_collapse_py(path, blank) == target:
                keep.append(path)
        else:
            if merge_repeats_py(path) == target:
                keep.append(path)
    return keep


def score_path(path, emissions, trans=None, start=None) -> float:
    total = 0.0
    prev = None
    for t, label in enumerate(path):
        total += float(emissions[t, label])
        if trans is not None:
            total += float(start[label]) if t == 0 else float(trans[prev, label])
        prev = label
    return total


def oracle_score_paths(paths, emissions, trans=None, start=None, merge="logadd") -> float:
    scores = [score_path(p, emissions, trans, start) for p in paths]
    if not scores:
        return float("-inf")
    return max(scores) if merge == "max" else logsumexp_py(scores)


# ---------------------------------------------------------------------------
# Path enumeration, vectorized form (up to n_labels**t of a few million)
#
# Paths are indexed 0..K**T-1 and decoded column by column; the collapsed
# unit sequence of each path is folded into a single integer key, which
# makes grouping and filtering pure numpy.
# ---------------------------------------------------------------------------


def _column(p: int, k: int, t: int, col: int) -> np.ndarray:
    return (np.arange(p) // k ** (t - 1 - col)) % k


def all_path_scores(emissions, trans=None, start=None) -> np.ndarray:
    """Score of every one of K**T paths, in path-index order."""
    emissions = np.asarray(emissions, dtype=np.float64)
    t, k = emissions.shape
    p = k ** t
    scores = np.zeros(p)
    prev = None
    for col in range(t):
        labels = _column(p, k, t, col)
        scores += emissions[col][labels]
        if trans is not None:
            scores += np.asarray(start, float)[labels] if col == 0 \
                else np.asarray(trans, float)[prev, labels]
        prev = labels
    return scores


def collapse_keys(k: int, t: int, blank=None, silence=None):
    """Fold each path's collapsed unit sequence into an integer key.

    Repeats merge first; with a blank given, blank units are then dropped
    (so a blank between equal labels keeps them distinct units). Returns
    (keys, n_silence_units) over all K**T paths.
    """
    p = k ** t
    base = k + 2
    keys = np.zeros(p, dtype=np.int64)
    nsil = np.zeros(p, dtype=np.int64)
    prev = np.full(p, -1)
    for col in range(t):
        labels = _column(p, k, t, col)
        new_unit = labels != prev
        if blank is not None:
            new_unit &= labels != blank
        keys = np.where(new_unit, keys * base + labels + 1, keys)
        if silence is not None:
            nsil += (new_unit & (labels == silence)).astype(np.int64)
        prev = labels
    return keys, nsil


def units_key(units, k: int) -> int:
    base = k + 2
    key = 0
    for u in units:
        key = key * base + int(u) + 1
    return key


def key_units(key: int, k: int):
    base = k + 2
    digits = []
    while key > 0:
        digits.append(int(key % base) - 1)
        key //= base
    return tuple(reversed(digits))


def oracle_forward(emissions, target, mode, trans=None, start=None, blank=None,
                   merge="logadd", return_count=False):
    """Brute-force aggregate over all paths collapsing to target.

    mode "ctc": collapse drops the given blank; "asg": merge repeats only;
    "full": no target constraint, aggregate over every path.
    """
    emissions = np.asarray(emissions, dtype=np.float64)
    t, k = emissions.shape
    scores = all_path_scores(emissions, trans, start)
    if mode == "full":
        mask = np.ones(scores.size, dtype=bool)
    else:
        keys, _ = collapse_keys(k, t, blank=blank if mode == "ctc" else None)
        mask = keys == units_key(target, k)
    picked = scores[mask]
    if picked.size == 0:
        result = float("-inf")
    elif merge == "max":
        result = float(picked.max())
    else:
        m = picked.max()
        result = float(m + np.log(np.exp(picked - m).sum()))
    if return_count:
        return result, int(mask.sum())
    return result


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------


def finite_difference(f, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        grad[idx] = (f(xp) - f(xm)) / (2.0 * h)
        it.iternext()
    return grad


def max_rel_error(analytic, numeric) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.abs(numeric).max()) if numeric.size else 0.0, 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


# ---------------------------------------------------------------------------
# Direct-summation convolution oracle
# ---------------------------------------------------------------------------


def naive_glu_forward(x, w, b, v, c) -> np.ndarray:
    """Gated conv output via explicit loops; w, v are effective weights
    of shape (d_out, d_in, kw)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    t_in, d_in = x.shape
    d_out, _, kw = w.shape
    t_out = t_in - kw + 1
    out = np.zeros((t_out, d_out))
    for t in range(t_out):
        for o in range(d_out):
            a = float(b[o])
            g = float(c[o])
            for j in range(kw):
                for d in range(d_in):
                    a += x[t + j, d] * w[o, d, j]
                    g += x[t + j, d] * v[o, d, j]
            out[t, o] = a / (1.0 + math.exp(-g))
    return out


# ---------------------------------------------------------------------------
# Direct-DFT filterbank oracle (no FFT anywhere)
# ---------------------------------------------------------------------------


def naive_band_energies(samples, rate: int, n_mels: int = 40,
                        window: int = 400, stride: int = 160) -> np.ndarray:
    """Mel filterbank energies per frame computed with a DFT matrix and
    re-derived triangle weights."""
    samples = np.asarray(samples, dtype=np.float64)
    n_frames = (samples.size - window) // stride + 1
    n_fft = 1
    while n_fft < window:
        n_fft *= 2
    n_bins = n_fft // 2 + 1

    idx = np.arange(window)
    ham = 0.54 - 0.46 * np.cos(2.0 * np.pi * idx / (window - 1))
    angles = 2.0 * np.pi * np.outer(np.arange(n_bins), np.arange(window)) / n_fft
    cos_m = np.cos(angles)
    sin_m = np.sin(angles)

    def mel(f):
        return 2595.0 * math.log10(1.0 + f / 700.0)

    def mel_inv(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    top = mel(rate / 2.0)
    edges = [mel_inv(top * j / (n_mels + 1)) for j in range(n_mels + 2)]
    bin_hz = np.arange(n_bins) * rate / n_fft
    weights = np.zeros((n_mels, n_bins))
    for band in range(n_mels):
        lo, mid, hi = edges[band], edges[band + 1], edges[band + 2]
        for j, f in enumerate(bin_hz):
            if lo < f < hi:
                weights[band, j] = min((f - lo) / (mid - lo), (hi - f) / (hi - mid))

    energies = np.zeros((n_frames, n_mels))
    for t in range(n_frames):
        frame = samples[t * stride: t * stride + window] * ham
        re = cos_m @ frame
        im = -(sin_m @ frame)
        energies[t] = weights @ (re * re + im * im)
    return energies


# ---------------------------------------------------------------------------
# ARPA builders
# ---------------------------------------------------------------------------


def complete_arpa_text(vocab, order: int = 2, seed: int = 0, uniform: bool = False) -> str:
    """An ARPA model containing every well-formed n-gram over the vocabulary.

    With every context present up to the model order, scoring never backs
    off and the model state after any history shorter than the order is the
    full history, which is what makes exhaustive decoder comparisons exact.
    """
    rng = np.random.default_rng(seed)
    vocab = sorted({w.lower() for w in vocab})
    flat = math.log10(1.0 / (len(vocab) + 1))

    def logp():
        return flat if uniform else float(rng.uniform(-2.5, -0.2))

    def bow():
        return 0.0 if uniform else float(rng.uniform(-0.8, 0.3))

    sections: dict[int, list[tuple]] = {}
    sections[1] = [("<s>",), ("</s>",), ("<unk>",)] + [(w,) for w in vocab]
    for k in range(2, order + 1):
        grams = []
        for use_bos in (False, True):
            for use_eos in (False, True):
                m = k - int(use_bos) - int(use_eos)
                if m < 0:
                    continue
                for mid in itertools.product(vocab, repeat=m):
                    gram = (("<s>",) if use_bos else ()) + mid + (("</s>",) if use_eos else ())
                    if len(gram) == k:
                        grams.append(gram)
        sections[k] = sorted(set(grams))

    lines = ["\\data\\"]
    for k in range(1, order + 1):
        lines.append(f"ngram {k}={len(sections[k])}")
    lines.append("")
    for k in range(1, order + 1):
        lines.append(f"\\{k}-grams:")
        for gram in sections[k]:
            lp = logp()
            row = f"{lp:.8f}\t{' '.join(gram)}"
            if k < order:
                row += f"\t{bow():.8f}"
            lines.append(row)
        lines.append("")
    lines.append("\\end\\")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Exhaustive decoder oracle
# ---------------------------------------------------------------------------


def oracle_decode(emissions, transitions, lm, lexicon, params, mode,
                  letter_dict) -> list[tuple[tuple[str, ...], float]]:
    """Score every word sequence by enumerating all letter paths.

    Paths are grouped by their collapsed unit sequence; a group is valid
    when splitting its units on silence yields complete lexicon spellings.
    Each valid word sequence aggregates (logadd or max, per params) the
    acoustic+transition path scores plus gamma per silence unit, then adds
    the weighted sentence LM score and the per-word penalty. Returns
    (words, score) pairs sorted best first.
    """
    emissions = np.asarray(emissions, dtype=np.float64)
    t, width = emissions.shape
    sil = letter_dict.silence_id
    if mode == "ctc":
        blank = width - 1
        trans = start = None
    else:
        blank = None
        trans, start = transitions.trans, transitions.start

    scores = all_path_scores(emissions, trans, start)
    keys, nsil = collapse_keys(width, t, blank=blank, silence=sil)
    scores = scores + params.gamma * nsil

    order = np.argsort(keys, kind="stable")
    keys_sorted = keys[order]
    scores_sorted = scores[order]
    uniq, starts = np.unique(keys_sorted, return_index=True)
    if params.merge_mode == "max":
        agg = np.maximum.reduceat(scores_sorted, starts)
    else:
        agg = np.logaddexp.reduceat(scores_sorted, starts)

    by_spelling: dict[tuple, list[str]] = {}
    for word, spelling in zip(lexicon.words, lexicon.spellings):
        by_spelling.setdefault(tuple(spelling), []).append(word)

    def parses(units):
        chunks = []
        cur = []
        for u in units:
            if u == sil:
                if cur:
                    chunks.append(tuple(cur))
                    cur = []
            else:
                cur.append(u)
        if cur:
            chunks.append(tuple(cur))
        choices = []
        for chunk in chunks:
            if chunk not in by_spelling:
                return None
            choices.append(by_spelling[chunk])
        return [tuple(ws) for ws in itertools.product(*choices)]

    results: dict[tuple[str, ...], float] = {}
    for key, acoustic in zip(uniq, agg):
        units = key_units(int(key), width)
        word_seqs = parses(units)
        if word_seqs is None:
            continue
        for words in word_seqs:
            total = (
                float(acoustic)
                + params.alpha * LOG10_TO_LN * lm.score_sentence(list(words))
                + params.beta * len(words)
            )
            if words in results:
                if params.merge_mode == "max":
                    results[words] = max(results[words], total)
                else:
                    results[words] = float(np.logaddexp(results[words], total))
            else:
                results[words] = total
    return sorted(results.items(), key=lambda kv: -kv[1])


# ---------------------------------------------------------------------------
# Synthetic overfit corpus
# ---------------------------------------------------------------------------

TOY_WORDS = ("bell", "kit", "sun", "dog", "fish")
TOY_RATE = 16000
_TONE_SECONDS = 0.12
# Longer than the toy model's receptive field, so mid-gap frames see
# pure noise rather than a mix of both flanking tones.
_GAP_SECONDS = 0.16


def _toy_tone_table(letter_dict):
    """One distinct mel-band center frequency per grapheme used by the
    toy vocabulary, repetition symbol and silence included."""
    from letterasr.criterion import SILENCE, encode_repetitions
    from letterasr.features import hz_to_mel, mel_to_hz

    graphemes = sorted({g for w in TOY_WORDS for g in encode_repetitions(w)} | {SILENCE})
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(TOY_RATE / 2.0), 42))
    centers = edges[1:-1]
    table = {}
    for i, g in enumerate(graphemes):
        table[letter_dict.index(g)] = float(centers[4 + 2 * i])
    return table


def make_toy_corpus(letter_dict, n_utts: int = 50, seed: int = 7):
    """Synthetic utterances: one tone per grapheme, noise-filled gaps.

    Every vocabulary word appears at least once; texts are 1-3 words drawn
    uniformly. Returns letterasr.train.Utterance objects with normalized
    features and encoded targets.
    """
    from letterasr.criterion import encode_repetitions, text_to_target
    from letterasr.features import Waveform, compute_mfsc, normalize
    from letterasr.train import Utterance

    rng = np.random.default_rng(seed)
    tones = _toy_tone_table(letter_dict)
    tone_len = int(TOY_RATE * _TONE_SECONDS)
    gap_len = int(TOY_RATE * _GAP_SECONDS)

    ramp = int(0.005 * TOY_RATE)
    envelope_edge = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)

    def grapheme_audio(gid, n):
        # Fade edges in and out so piece joins stay click-free; an abrupt
        # phase step would smear broadband energy across unrelated bands.
        hz = tones[gid]
        ts = np.arange(n) / TOY_RATE
        phase = rng.uniform(0.0, 2.0 * np.pi)
        env = np.ones(n)
        env[:ramp] = envelope_edge
        env[-ramp:] = envelope_edge[::-1]
        return 0.3 * env * np.sin(2.0 * np.pi * hz * ts + phase) + rng.normal(0.0, 0.005, n)

    def utterance_audio(text):
        # Utterances begin and end in silence, like recorded speech.
        pieces = [grapheme_audio(letter_dict.silence_id, gap_len)]
        for i, word in enumerate(text.split()):
            if i > 0:
                pieces.append(grapheme_audio(letter_dict.silence_id, gap_len))
            for g in encode_repetitions(word):
                pieces.append(grapheme_audio(letter_dict.index(g), tone_len))
        pieces.append(grapheme_audio(letter_dict.silence_id, gap_len))
        return np.concatenate(pieces)

    texts = list(TOY_WORDS)
    while len(texts) < n_utts:
        n_words = int(rng.integers(1, 4))
        texts.append(" ".join(rng.choice(TOY_WORDS, size=n_words)))
    texts = texts[:n_utts]

    sil = letter_dict.silence_id
    out = []
    for i, text in enumerate(texts):
        feats = normalize(compute_mfsc(Waveform(utterance_audio(text), TOY_RATE)))
        target = [sil] + text_to_target(text, letter_dict) + [sil]
        out.append(Utterance(utt_id=f"toy{i:03d}", feats=feats, target=target, text=text))
    return out
