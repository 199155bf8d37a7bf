"""Beam-search decoder tests.

The decisive checks run the beam wide open on tiny instances and demand
exact agreement with an oracle that scores every letter path of every word
sequence by enumeration, for both merge modes and both collapse semantics.
"""

import io
import math

import numpy as np
import pytest

from letterasr import criterion as crit
from letterasr import decoder as dec
from letterasr import lm as lm_mod
from letterasr.lm import LOG10_TO_LN

from helpers import complete_arpa_text, oracle_decode

TINY = crit.LetterDict(("a", "b", "c", "#", "1", "2"))


def wide_open(merge_mode="logadd", **overrides):
    base = dict(
        alpha=1.0, beta=0.0, gamma=0.0,
        beam_size=200000, beam_threshold=1e9, merge_mode=merge_mode,
    )
    base.update(overrides)
    return dec.DecoderParams(**base)


def complete_lm(words, order=5, seed=0):
    return lm_mod.parse_arpa(io.StringIO(complete_arpa_text(words, order, seed)))


def random_instance(rng, mode):
    n_words = int(rng.integers(1, 3))
    words = set()
    while len(words) < n_words:
        size = int(rng.integers(1, 4))
        words.add("".join(rng.choice(["a", "b", "c"], size=size)))
    words = sorted(words)
    lexicon = dec.Lexicon.from_words(words, TINY)
    lm = complete_lm(words, seed=int(rng.integers(1 << 20)))
    trie = dec.build_trie(lexicon, lm, letter_dict=TINY)
    t = int(rng.integers(2, 9))
    width = len(TINY) + (1 if mode == "ctc" else 0)
    emissions = rng.normal(0.0, 1.5, size=(t, width))
    transitions = crit.TransitionTable(
        rng.normal(0.0, 0.4, size=(len(TINY), len(TINY))),
        rng.normal(0.0, 0.4, size=len(TINY)),
    )
    params = wide_open(
        alpha=float(rng.uniform(0.3, 1.5)),
        beta=float(rng.uniform(-0.5, 0.5)),
        gamma=float(rng.uniform(-0.5, 0.3)),
    )
    return emissions, transitions, lm, lexicon, trie, params


class TestLexicon:
    def test_from_words_applies_repetition_encoding(self):
        lex = dec.Lexicon.from_words(["abb"], TINY)
        assert lex.spellings == [TINY.encode(["a", "b", "1"])]

    def test_from_words_dedups_and_lowercases(self):
        lex = dec.Lexicon.from_words(["Cab", "cab", "ba"], TINY)
        assert lex.words == ["cab", "ba"]

    def test_load(self, tmp_path):
        path = tmp_path / "lex.txt"
        path.write_text("ab\ta b\nba\tb a\n\n")
        lex = dec.Lexicon.load(path, TINY)
        assert lex.words == ["ab", "ba"]
        assert lex.spellings == [[0, 1], [1, 0]]

    def test_load_bad_line(self, tmp_path):
        path = tmp_path / "lex.txt"
        path.write_text("justoneword\n")
        with pytest.raises(ValueError, match="line 1"):
            dec.Lexicon.load(path, TINY)

    def test_empty_lexicon_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            dec.Lexicon([], [])


class TestTrie:
    def test_smear_is_subtree_best(self):
        rng = np.random.default_rng(0)
        words = set()
        while len(words) < 1000:
            size = int(rng.integers(1, 7))
            words.add("".join(rng.choice(list("abc"), size=size)))
        words = sorted(words)
        lm = complete_lm(words, order=1, seed=3)
        lexicon = dec.Lexicon.from_words(words, TINY)
        trie = dec.build_trie(lexicon, lm, letter_dict=TINY)

        best: dict[tuple, float] = {}
        for wid, spelling in enumerate(lexicon.spellings):
            score = trie.word_scores[wid]
            for k in range(len(spelling) + 1):
                prefix = tuple(spelling[:k])
                best[prefix] = max(best.get(prefix, -math.inf), score)

        def walk(node, prefix):
            assert math.isclose(node.smear, best[prefix], rel_tol=0, abs_tol=1e-12)
            for g, child in node.children.items():
                walk(child, prefix + (g,))

        walk(trie.root, ())

    def test_logadd_smear_aggregates(self):
        words = ["a", "ab"]
        lm = complete_lm(words, order=1, seed=4)
        lexicon = dec.Lexicon.from_words(words, TINY)
        trie = dec.build_trie(lexicon, lm, smear_mode="logadd", letter_dict=TINY)
        node_a = trie.root.children[TINY.index("a")]
        want = np.logaddexp(trie.word_scores[0], trie.word_scores[1])
        assert math.isclose(node_a.smear, want, abs_tol=1e-12)

    def test_word_scores_are_natural_log_unigrams(self):
        words = ["ab"]
        lm = complete_lm(words, order=2, seed=5)
        lexicon = dec.Lexicon.from_words(words, TINY)
        trie = dec.build_trie(lexicon, lm, letter_dict=TINY)
        _, lp = lm.score_word((), "ab")
        assert math.isclose(trie.word_scores[0], lp * LOG10_TO_LN, abs_tol=1e-12)

    def test_silence_in_spelling_rejected(self):
        lexicon = dec.Lexicon(["bad"], [[0, TINY.silence_id]])
        with pytest.raises(ValueError, match="silence"):
            dec.build_trie(lexicon, complete_lm(["bad"]), letter_dict=TINY)

    def test_adjacent_repeats_flagged(self):
        lexicon = dec.Lexicon(["aa"], [[0, 0]])
        trie = dec.build_trie(lexicon, complete_lm(["aa"]), letter_dict=TINY)
        assert trie.has_adjacent_repeats


class TestParamsAndPrune:
    def test_validation(self):
        with pytest.raises(ValueError):
            dec.DecoderParams(beam_size=0).validate()
        with pytest.raises(ValueError):
            dec.DecoderParams(beam_threshold=0.0).validate()
        with pytest.raises(ValueError):
            dec.DecoderParams(merge_mode="sum").validate()

    def make_hyp(self, score):
        return dec.Hypothesis(
            lm_state=(), node=None, last_label=0, score=score,
            n_silences=0, frame=0,
        )

    def test_threshold_drops_far_hypotheses(self):
        beam = [self.make_hyp(s) for s in (0.0, -1.0, -5.0)]
        kept = dec.prune(beam, dec.DecoderParams(beam_threshold=2.0))
        assert [h.score for h in kept] == [0.0, -1.0]

    def test_histogram_cap(self):
        beam = [self.make_hyp(float(-i)) for i in range(10)]
        kept = dec.prune(beam, dec.DecoderParams(beam_size=3, beam_threshold=100.0))
        assert [h.score for h in kept] == [0.0, -1.0, -2.0]


class TestValidation:
    def setup_method(self):
        self.words = ["ab"]
        self.lm = complete_lm(self.words)
        self.lexicon = dec.Lexicon.from_words(self.words, TINY)
        self.trie = dec.build_trie(self.lexicon, self.lm, letter_dict=TINY)
        self.transitions = crit.TransitionTable.zeros(len(TINY))

    def test_asg_width_checked(self):
        with pytest.raises(dec.DecodeError, match="6 emission columns"):
            dec.beam_search(
                np.zeros((4, 7)), self.transitions, self.lm, self.lexicon,
                self.trie, wide_open(), mode="asg", letter_dict=TINY,
            )

    def test_ctc_width_checked(self):
        with pytest.raises(dec.DecodeError, match="7 emission columns"):
            dec.beam_search(
                np.zeros((4, 6)), None, self.lm, self.lexicon,
                self.trie, wide_open(), mode="ctc", letter_dict=TINY,
            )

    def test_asg_needs_transitions(self):
        with pytest.raises(dec.DecodeError, match="transition"):
            dec.beam_search(
                np.zeros((4, 6)), None, self.lm, self.lexicon,
                self.trie, wide_open(), mode="asg", letter_dict=TINY,
            )

    def test_asg_rejects_repeat_lexicon(self):
        lexicon = dec.Lexicon(["aa"], [[0, 0]])
        trie = dec.build_trie(lexicon, self.lm, letter_dict=TINY)
        with pytest.raises(dec.DecodeError, match="repetition encoding"):
            dec.beam_search(
                np.zeros((4, 6)), self.transitions, self.lm, lexicon,
                trie, wide_open(), mode="asg", letter_dict=TINY,
            )

    def test_unknown_mode(self):
        with pytest.raises(dec.DecodeError, match="mode"):
            dec.beam_search(
                np.zeros((4, 6)), self.transitions, self.lm, self.lexicon,
                self.trie, wide_open(), mode="hmm", letter_dict=TINY,
            )

    def test_tight_beam_with_no_complete_hypothesis(self):
        # Force the only survivor to sit mid-word at the end of the input.
        lexicon = dec.Lexicon.from_words(["abca"], TINY)
        trie = dec.build_trie(lexicon, self.lm, letter_dict=TINY)
        e = np.full((3, 6), -50.0)
        e[0, TINY.index("a")] = 0.0
        e[1, TINY.index("b")] = 0.0
        e[2, TINY.index("c")] = 0.0
        with pytest.raises(dec.DecodeError, match="beam_size"):
            dec.beam_search(
                e, self.transitions, self.lm, lexicon, trie,
                wide_open(beam_size=1, beam_threshold=5.0),
                mode="asg", letter_dict=TINY,
            )


class TestHandComputedSingleFrame:
    def test_one_frame_scores(self):
        # T=1 exposes the init and finalization arithmetic with no search.
        words = ["a"]
        lm = complete_lm(words, order=2, seed=6)
        lexicon = dec.Lexicon.from_words(words, TINY)
        trie = dec.build_trie(lexicon, lm, letter_dict=TINY)
        rng = np.random.default_rng(7)
        e = rng.normal(size=(1, 6))
        tr = crit.TransitionTable(
            rng.normal(size=(6, 6)), rng.normal(size=6)
        )
        params = wide_open(alpha=0.7, beta=0.3, gamma=-0.2)
        results = dec.beam_search(
            e, tr, lm, lexicon, trie, params, mode="asg", letter_dict=TINY, nbest=5
        )
        sil = TINY.silence_id
        a = TINY.index("a")
        lp_word = lm.score_word(lm.begin_state(), "a")[1]
        state_after = lm.score_word(lm.begin_state(), "a")[0]
        eos_after_word = lm.score_word(state_after, "</s>")[1]
        eos_empty = lm.score_word(lm.begin_state(), "</s>")[1]
        want = {
            (): e[0, sil] + tr.start[sil] + params.gamma
                + params.alpha * eos_empty * LOG10_TO_LN,
            ("a",): e[0, a] + tr.start[a] + params.beta
                + params.alpha * (lp_word + eos_after_word) * LOG10_TO_LN,
        }
        got = {r.words: r.score for r in results}
        assert set(got) == set(want)
        for key in want:
            assert math.isclose(got[key], want[key], rel_tol=0, abs_tol=1e-12)


class TestOracleEquivalence:
    @pytest.mark.parametrize("mode", ["asg", "ctc"])
    @pytest.mark.parametrize("seed", range(4))
    def test_full_nbest_list_matches_enumeration(self, mode, seed):
        rng = np.random.default_rng(1000 * (mode == "ctc") + seed)
        emissions, transitions, lm, lexicon, trie, params = random_instance(rng, mode)
        results = dec.beam_search(
            emissions, transitions if mode == "asg" else None, lm, lexicon,
            trie, params, mode=mode, letter_dict=TINY, nbest=10 ** 9,
        )
        want = oracle_decode(emissions, transitions, lm, lexicon, params, mode, TINY)
        got = {r.words: r.score for r in results}
        assert got.keys() == dict(want).keys()
        for words, score in want:
            assert abs(got[words] - score) < 1e-8, words
        assert results[0].score == max(got.values())

    @pytest.mark.parametrize("mode", ["asg", "ctc"])
    def test_max_merge_matches_viterbi_oracle(self, mode):
        rng = np.random.default_rng(77 + (mode == "ctc"))
        emissions, transitions, lm, lexicon, trie, _ = random_instance(rng, mode)
        params = wide_open("max", alpha=0.8, beta=0.1, gamma=-0.1)
        results = dec.beam_search(
            emissions, transitions if mode == "asg" else None, lm, lexicon,
            trie, params, mode=mode, letter_dict=TINY, nbest=10 ** 9,
        )
        want = dict(oracle_decode(emissions, transitions, lm, lexicon, params, mode, TINY))
        got = {r.words: r.score for r in results}
        assert got.keys() == want.keys()
        for words in want:
            assert abs(got[words] - want[words]) < 1e-8

    def test_logadd_beats_max(self):
        rng = np.random.default_rng(11)
        emissions, transitions, lm, lexicon, trie, _ = random_instance(rng, "asg")
        best = {}
        for merge in ("logadd", "max"):
            res = dec.beam_search(
                emissions, transitions, lm, lexicon, trie,
                wide_open(merge), mode="asg", letter_dict=TINY,
            )
            best[merge] = res[0].score
        assert best["logadd"] >= best["max"]

    def test_logadd_smear_still_exact(self):
        rng = np.random.default_rng(12)
        words = ["a", "ab"]
        lm = complete_lm(words, seed=13)
        lexicon = dec.Lexicon.from_words(words, TINY)
        trie = dec.build_trie(lexicon, lm, smear_mode="logadd", letter_dict=TINY)
        e = rng.normal(size=(5, 6))
        tr = crit.TransitionTable(rng.normal(size=(6, 6)) * 0.3, rng.normal(size=6) * 0.3)
        params = wide_open(alpha=0.9, beta=0.2, gamma=0.1)
        results = dec.beam_search(
            e, tr, lm, lexicon, trie, params, mode="asg", letter_dict=TINY, nbest=10 ** 9
        )
        want = dict(oracle_decode(e, tr, lm, lexicon, params, "asg", TINY))
        got = {r.words: r.score for r in results}
        assert got.keys() == want.keys()
        for w in want:
            assert abs(got[w] - want[w]) < 1e-8


class TestResultShape:
    def decode_beamy(self, seed=20):
        rng = np.random.default_rng(seed)
        words = ["ab", "c"]
        lm = complete_lm(words, seed=21)
        lexicon = dec.Lexicon.from_words(words, TINY)
        trie = dec.build_trie(lexicon, lm, letter_dict=TINY)
        e = rng.normal(size=(8, 6))
        tr = crit.TransitionTable.zeros(len(TINY))
        return dec.beam_search(
            e, tr, lm, lexicon, trie, wide_open(), mode="asg",
            letter_dict=TINY, nbest=50,
        )

    def test_spans_partition_frames(self):
        for res in self.decode_beamy():
            if not res.words:
                assert res.spans == ()
                continue
            assert res.spans[0][0] == 0
            assert res.spans[-1][1] == 7
            for (a, b), (c, d) in zip(res.spans, res.spans[1:]):
                assert c == b + 1
                assert a <= b and c <= d

    def test_text_joins_words(self):
        results = self.decode_beamy()
        for res in results:
            assert res.text == " ".join(res.words)

    def test_results_sorted_descending(self):
        results = self.decode_beamy()
        scores = [r.score for r in results]
        assert scores == sorted(scores, reverse=True)

    def test_decoding_is_deterministic(self):
        a = self.decode_beamy()
        b = self.decode_beamy()
        assert [(r.words, r.score, r.spans) for r in a] == [
            (r.words, r.score, r.spans) for r in b
        ]

    def test_repetition_word_decodes_to_original(self):
        # "abb" is spelled a b 1; committing it must emit the word itself.
        words = ["abb"]
        lm = complete_lm(words, seed=22)
        lexicon = dec.Lexicon.from_words(words, TINY)
        trie = dec.build_trie(lexicon, lm, letter_dict=TINY)
        e = np.full((3, 6), -30.0)
        e[0, TINY.index("a")] = 0.0
        e[1, TINY.index("b")] = 0.0
        e[2, TINY.index("1")] = 0.0
        tr = crit.TransitionTable.zeros(len(TINY))
        results = dec.beam_search(
            e, tr, lm, lexicon, trie, wide_open(), mode="asg", letter_dict=TINY
        )
        assert results[0].words == ("abb",)
