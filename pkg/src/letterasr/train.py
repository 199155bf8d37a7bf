"""Training loop, optimizer, and error metrics.

Plain SGD with classical momentum over the model parameters and, for ASG,
the transition table, with the whole gradient collection clipped to a
global norm budget before each step. Also holds the manifest reader,
greedy decoding, and Levenshtein-based letter / word error rates.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import criterion as crit
from . import features as feat
from .criterion import LetterDict, TransitionTable
from .model import GatedConvNet

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Gradient clipping and the optimizer
# ---------------------------------------------------------------------------


def global_norm(grads: dict) -> float:
    """L2 norm of the whole gradient collection."""
    total = 0.0
    for g in grads.values():
        total += float((np.asarray(g, dtype=np.float64) ** 2).sum())
    return math.sqrt(total)


def clip_gradient(grads: dict, max_norm: float, amplify_small: bool = False) -> dict:
    """Scale the collection so its global norm is at most max_norm.

    A zero gradient passes through unchanged. With amplify_small=True the
    scale becomes max(norm, max_norm) / norm, which leaves large gradients
    alone and blows small ones up to the budget instead; that variant is
    kept behind the flag and is not used by the training loop.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm == 0.0:
        return {k: np.array(g, copy=True) for k, g in grads.items()}
    if amplify_small:
        scale = max(norm, max_norm) / norm
    else:
        scale = min(1.0, max_norm / norm)
    return {k: np.asarray(g) * np.asarray(g).dtype.type(scale) for k, g in grads.items()}


@dataclass
class OptimState:
    """Hyperparameters plus per-parameter velocity buffers."""

    lr: float
    momentum: float = 0.9
    clip: float = 0.2
    velocities: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.clip <= 0:
            raise ValueError("clip must be positive")


def sgd_momentum_step(params: dict, grads: dict, opt: OptimState) -> None:
    """v <- momentum * v - lr * g; theta <- theta + v, updating in place."""
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise KeyError(f"no gradient for parameter {name}")
        g = np.asarray(g)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        v = opt.velocities.get(name)
        if v is None:
            v = np.zeros_like(p, dtype=np.float64)
        v = opt.momentum * v - opt.lr * g.astype(np.float64)
        opt.velocities[name] = v
        p += v.astype(p.dtype)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def edit_distance(ref, hyp) -> int:
    """Levenshtein distance with unit insert / delete / substitute costs."""
    ref = list(ref)
    hyp = list(hyp)
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(
                prev[j] + 1,
                cur[j - 1] + 1,
                prev[j - 1] + (r != h),
            )
        prev = cur
    return prev[-1]


def error_rate(ref, hyp) -> float:
    """edit_distance / max(1, len(ref))."""
    return edit_distance(ref, hyp) / max(1, len(list(ref)))


def ler(ref_letters, hyp_letters) -> float:
    return error_rate(list(ref_letters), list(hyp_letters))


def wer(ref_words, hyp_words) -> float:
    return error_rate(list(ref_words), list(hyp_words))


def greedy_decode(emissions, mode: str = "asg", letter_dict: LetterDict | None = None) -> str:
    """Per-frame argmax collapsed to text, words separated by spaces."""
    if letter_dict is None:
        letter_dict = LetterDict()
    ids = np.argmax(np.asarray(emissions), axis=1)
    if mode == "asg":
        units = crit.asg_collapse(ids)
    elif mode == "ctc":
        units = crit.ctc_collapse(ids, letter_dict.blank_id)
    else:
        raise ValueError(f"unknown criterion mode {mode!r}")
    return " ".join(crit.units_to_words(units, letter_dict))


# ---------------------------------------------------------------------------
# Corpus ingestion
# ---------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    utt_id: str
    path: str
    text: str


def read_manifest(path) -> list[ManifestEntry]:
    """TSV: utterance id, audio or feature path, transcription."""
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t", 2)
            if len(parts) != 3:
                raise ValueError(
                    f"{path}: line {line_no}: expected 'id<TAB>path<TAB>transcription'"
                )
            entries.append(ManifestEntry(parts[0], parts[1], parts[2]))
    if not entries:
        raise ValueError(f"{path}: empty manifest")
    return entries


@dataclass
class Utterance:
    utt_id: str
    feats: np.ndarray  # normalized, unpadded
    target: list[int]
    text: str


def load_features_for(entry: ManifestEntry) -> np.ndarray:
    """Normalized features for a manifest entry, from WAV or a feature file.

    Feature files are assumed to hold already-normalized coefficients, as
    written by the features command.
    """
    if entry.path.endswith(".wav"):
        return feat.normalize(feat.compute_mfsc(feat.read_wav(entry.path)))
    return np.asarray(feat.read_feature_file(entry.path), dtype=np.float64)


def load_utterances(entries, letter_dict: LetterDict) -> list[Utterance]:
    out = []
    for entry in entries:
        text = crit.normalize_text(entry.text)
        out.append(
            Utterance(
                utt_id=entry.utt_id,
                feats=load_features_for(entry),
                target=crit.text_to_target(text, letter_dict),
                text=text,
            )
        )
    return out


# ---------------------------------------------------------------------------
# The epoch loop
# ---------------------------------------------------------------------------


@dataclass
class EpochStats:
    mean_loss: float
    train_ler: float
    n_skipped: int
    wall_time: float


def _min_target_frames(target, criterion_name: str) -> int:
    if criterion_name == "ctc":
        repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
        return len(target) + repeats
    return len(target)


def utterance_loss(model: GatedConvNet, transitions, criterion_name: str, utt: Utterance,
                   train: bool = False, seed: int | None = None):
    """Forward plus criterion; returns (loss, d loss / d emissions, d transitions)."""
    x = feat.pad(utt.feats, model.total_padding)
    emissions = model.forward(x, train=train, seed=seed)
    if criterion_name == "ctc":
        loss, de = crit.ctc_loss(emissions, utt.target)
        return loss, de, None
    loss, de, dtr = crit.asg_loss(emissions, transitions, utt.target)
    return loss, de, dtr


def train_epoch(
    data: list[Utterance],
    model: GatedConvNet,
    criterion_name: str,
    transitions: TransitionTable | None,
    opt: OptimState,
    batch_size: int,
    rng: np.random.Generator,
) -> EpochStats:
    """One pass over the shuffled corpus with mini-batch averaged gradients.

    Utterances whose targets cannot fit in their frame count are skipped
    and counted. Returns the mean loss over used utterances and the
    corpus-level greedy letter error rate measured in eval mode.
    """
    if criterion_name not in ("ctc", "asg"):
        raise ValueError(f"unknown criterion {criterion_name!r}")
    if criterion_name == "asg" and transitions is None:
        raise ValueError("asg training requires a transition table")
    opt.validate()
    started = time.monotonic()

    params = dict(model.parameters())
    if criterion_name == "asg":
        params["transitions.trans"] = transitions.trans
        params["transitions.start"] = transitions.start

    order = rng.permutation(len(data))
    total_loss = 0.0
    n_used = 0
    n_skipped = 0
    for lo in range(0, len(order), batch_size):
        batch = order[lo : lo + batch_size]
        acc: dict[str, np.ndarray] | None = None
        batch_used = 0
        for idx in batch:
            utt = data[idx]
            if utt.feats.shape[0] < _min_target_frames(utt.target, criterion_name) or len(utt.target) == 0:
                n_skipped += 1
                log.warning("skipping %s: target does not fit in %d frames",
                            utt.utt_id, utt.feats.shape[0])
                continue
            seed = int(rng.integers(2**31 - 1))
            loss, de, dtr = utterance_loss(
                model, transitions, criterion_name, utt, train=True, seed=seed
            )
            grads = model.backward(de.astype(model.dtype))
            if dtr is not None:
                grads["transitions.trans"] = dtr.trans
                grads["transitions.start"] = dtr.start
            if acc is None:
                acc = {k: np.asarray(g, dtype=np.float64).copy() for k, g in grads.items()}
            else:
                for k, g in grads.items():
                    acc[k] += g
            total_loss += loss
            batch_used += 1
        if batch_used == 0:
            continue
        n_used += batch_used
        for k in acc:
            acc[k] /= batch_used
        sgd_momentum_step(params, clip_gradient(acc, opt.clip), opt)

    dist_total = 0
    len_total = 0
    for utt in data:
        x = feat.pad(utt.feats, model.total_padding)
        emissions = model.forward(x, train=False)
        hyp = greedy_decode(emissions, mode=criterion_name)
        dist_total += edit_distance(utt.text, hyp)
        len_total += len(utt.text)

    return EpochStats(
        mean_loss=total_loss / n_used if n_used else float("nan"),
        train_ler=dist_total / max(1, len_total),
        n_skipped=n_skipped,
        wall_time=time.monotonic() - started,
    )
