"""Command-line interface.

One executable with subcommands covering the whole pipeline: feature
extraction, training, forced alignment, beam-search decoding, scoring, and
inspection. Machine-readable results go to stdout, logs to stderr. Exit
codes: 0 success, 1 usage error, 2 data or parse error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import criterion as crit
from . import features as feat
from . import lm as lm_mod
from . import train as train_mod
from .decoder import (
    DecodeError,
    DecoderParams,
    Lexicon,
    beam_search,
    build_trie,
)
from .model import (
    ArchSpec,
    GatedConvNet,
    load_checkpoint,
    save_checkpoint,
)

log = logging.getLogger("letterasr")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    pass


class NumericError(RuntimeError):
    pass


class _UsageError(Exception):
    def __init__(self, message):
        self.message = message


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# Config and presets
# ---------------------------------------------------------------------------


@dataclass
class OptimConfig:
    lr: float = 0.01
    momentum: float = 0.9
    clip: float = 0.2
    batch_size: int = 4
    epochs: int = 1


@dataclass
class DecoderConfig:
    alpha: float = 1.0
    beta: float = 0.0
    gamma: float = 0.0
    beam_size: int = 250
    beam_threshold: float = 25.0
    merge_mode: str = "logadd"


@dataclass
class PathsConfig:
    manifest: str | None = None
    lexicon: str | None = None
    arpa: str | None = None
    checkpoint: str | None = None


@dataclass
class Config:
    arch: ArchSpec
    criterion: str = "asg"
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def to_dict(self) -> dict:
        return {
            "arch": self.arch.to_dict(),
            "criterion": self.criterion,
            "seed": self.seed,
            "paths": dataclasses.asdict(self.paths),
            "optimizer": dataclasses.asdict(self.optimizer),
            "decoder": dataclasses.asdict(self.decoder),
        }


def _strict_fields(cls, data: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown field(s) in {where}: {', '.join(sorted(extra))}")
    return cls(**data)


def config_from_dict(data: dict) -> Config:
    known = {"arch", "criterion", "seed", "paths", "optimizer", "decoder"}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown top-level field(s): {', '.join(sorted(extra))}")
    if "arch" not in data:
        raise ConfigError("missing required field: arch")
    try:
        arch = ArchSpec.from_dict(data["arch"])
    except ValueError as err:
        raise ConfigError(f"arch: {err}") from None
    cfg = Config(
        arch=arch,
        criterion=data.get("criterion", "asg"),
        seed=int(data.get("seed", 0)),
        paths=_strict_fields(PathsConfig, data.get("paths", {}), "paths"),
        optimizer=_strict_fields(OptimConfig, data.get("optimizer", {}), "optimizer"),
        decoder=_strict_fields(DecoderConfig, data.get("decoder", {}), "decoder"),
    )
    if cfg.criterion not in ("ctc", "asg"):
        raise ConfigError(f"criterion: expected 'ctc' or 'asg', got {cfg.criterion!r}")
    if cfg.decoder.merge_mode not in ("logadd", "max"):
        raise ConfigError(f"decoder.merge_mode: unknown mode {cfg.decoder.merge_mode!r}")
    return cfg


def load_config(path) -> Config:
    """Parse and validate a JSON config; referenced files must exist."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON: {err}") from None
    cfg = config_from_dict(data)
    for name in ("manifest", "lexicon", "arpa"):
        value = getattr(cfg.paths, name)
        if value is not None and not Path(value).exists():
            raise ConfigError(f"{name}: file not found: {value}")
    return cfg


# Published model shapes keyed by corpus and dropout regime.
PRESETS: dict[str, ArchSpec] = {
    "wsj-low-dropout": ArchSpec(
        n_conv_layers=17, dropout_first=0.25, dropout_last=0.25,
        hu_first=100, hu_last=375, kw_first=3, kw_last=21, fc_size=1000,
    ),
    "libri-low-dropout": ArchSpec(
        n_conv_layers=17, dropout_first=0.25, dropout_last=0.25,
        hu_first=200, hu_last=750, kw_first=13, kw_last=27, fc_size=1500,
    ),
    "libri-high-dropout": ArchSpec(
        n_conv_layers=19, dropout_first=0.20, dropout_last=0.60,
        hu_first=200, hu_last=1000, kw_first=13, kw_last=29, fc_size=2000,
    ),
}


def preset_config(name: str) -> Config:
    if name not in PRESETS:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        )
    return Config(arch=dataclasses.replace(PRESETS[name]))


def resolve_arch(value: str) -> ArchSpec:
    """An --arch value is either a preset name or a JSON file of fields."""
    if value in PRESETS:
        return dataclasses.replace(PRESETS[value])
    path = Path(value)
    if not path.exists():
        raise ConfigError(f"--arch: no preset or file named {value!r}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{value}: invalid JSON: {err}") from None
    try:
        return ArchSpec.from_dict(data)
    except ValueError as err:
        raise ConfigError(f"{value}: {err}") from None


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_features(args) -> int:
    entries = train_mod.read_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(e.path, str(out_dir / f"{e.utt_id}.bin")) for e in entries]
    if args.jobs > 1:
        import multiprocessing

        with multiprocessing.get_context("fork").Pool(args.jobs) as pool:
            frames = pool.starmap(feat.extract_file, jobs)
    else:
        frames = [feat.extract_file(src, dst) for src, dst in jobs]
    for entry, t in zip(entries, frames):
        print(f"{entry.utt_id}\t{t}")
    log.info("wrote %d feature files to %s", len(entries), out_dir)
    return EXIT_OK


def _cmd_train(args) -> int:
    arch = resolve_arch(args.arch)
    letter_dict = crit.default_letter_dict()
    n_labels = len(letter_dict) + (1 if args.criterion == "ctc" else 0)
    arch = dataclasses.replace(arch, n_labels=n_labels)
    entries = train_mod.read_manifest(args.manifest)
    data = train_mod.load_utterances(entries, letter_dict)

    model = GatedConvNet(arch, input_dim=feat.N_MELS, seed=args.seed)
    transitions = None
    if args.criterion == "asg":
        transitions = crit.TransitionTable.zeros(n_labels, dtype=np.float32)
    opt = train_mod.OptimState(lr=args.lr, momentum=args.momentum, clip=args.clip)
    rng = np.random.default_rng(args.seed)

    for epoch in range(1, args.epochs + 1):
        stats = train_mod.train_epoch(
            data, model, args.criterion, transitions, opt, args.batch_size, rng
        )
        if math.isnan(stats.mean_loss):
            raise NumericError(f"loss is NaN at epoch {epoch}")
        print(
            json.dumps(
                {
                    "epoch": epoch,
                    "loss": round(stats.mean_loss, 6),
                    "train_ler": round(stats.train_ler, 6),
                    "wall_time": round(stats.wall_time, 3),
                    "skipped": stats.n_skipped,
                }
            ),
            flush=True,
        )
    save_checkpoint(args.ckpt_out, model, transitions, criterion=args.criterion)
    log.info("saved checkpoint to %s", args.ckpt_out)
    return EXIT_OK


def _cmd_align(args) -> int:
    model, transitions, header = load_checkpoint(args.ckpt)
    criterion_name = header["criterion"]
    letter_dict = crit.default_letter_dict()
    entries = train_mod.read_manifest(args.manifest)
    data = train_mod.load_utterances(entries, letter_dict)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for utt in data:
            x = feat.pad(utt.feats, model.total_padding)
            emissions = model.forward(x, train=False).astype(np.float64)
            labels, _ = crit.viterbi_align(
                emissions, transitions, utt.target, mode=criterion_name
            )
            out.write(f"# {utt.utt_id}\n")
            cumulative = 0.0
            prev = None
            trans = transitions.trans if transitions is not None else None
            start = transitions.start if transitions is not None else None
            for t, lab in enumerate(labels):
                lab = int(lab)
                cumulative += float(emissions[t, lab])
                if criterion_name == "asg":
                    cumulative += float(start[lab]) if t == 0 else float(trans[prev, lab])
                name = "<blank>" if lab >= len(letter_dict) else letter_dict.grapheme(lab)
                out.write(f"{t}\t{name}\t{cumulative:.6f}\n")
                prev = lab
    finally:
        if args.out:
            out.close()
    return EXIT_OK


_DECODE_CTX: dict = {}


def _decode_one(payload):
    utt_id, emissions = payload
    ctx = _DECODE_CTX
    results = beam_search(
        emissions,
        ctx["transitions"],
        ctx["lm"],
        ctx["lexicon"],
        ctx["trie"],
        ctx["params"],
        mode=ctx["mode"],
        nbest=ctx["nbest"],
    )
    return utt_id, results


def _cmd_decode(args) -> int:
    letter_dict = crit.default_letter_dict()
    entries = train_mod.read_manifest(args.manifest)

    if args.ckpt:
        model, transitions, header = load_checkpoint(args.ckpt)
        mode = header["criterion"]
    elif args.emissions_dir:
        model = None
        mode = args.criterion
        transitions = (
            crit.TransitionTable.zeros(len(letter_dict)) if mode == "asg" else None
        )
    else:
        raise ConfigError("decode needs --ckpt or --emissions-dir")

    language_model = lm_mod.parse_arpa(args.arpa)
    lexicon = Lexicon.load(args.lexicon, letter_dict)
    trie = build_trie(lexicon, language_model, smear_mode=args.smear, letter_dict=letter_dict)
    params = DecoderParams(
        alpha=args.alpha,
        beta=args.beta,
        gamma=args.gamma,
        beam_size=args.beam_size,
        beam_threshold=args.beam_threshold,
        merge_mode=args.merge,
    )

    payloads = []
    for entry in entries:
        if model is not None:
            feats = train_mod.load_features_for(entry)
            x = feat.pad(feats, model.total_padding)
            emissions = model.forward(x, train=False).astype(np.float64)
        else:
            emissions = feat.read_feature_file(
                Path(args.emissions_dir) / f"{entry.utt_id}.bin"
            ).astype(np.float64)
        payloads.append((entry.utt_id, emissions))

    _DECODE_CTX.update(
        transitions=transitions,
        lm=language_model,
        lexicon=lexicon,
        trie=trie,
        params=params,
        mode=mode,
        nbest=args.nbest,
    )
    if args.jobs > 1:
        import multiprocessing

        with multiprocessing.get_context("fork").Pool(args.jobs) as pool:
            decoded = pool.map(_decode_one, payloads)
    else:
        decoded = [_decode_one(p) for p in payloads]

    for utt_id, results in decoded:
        for rank, res in enumerate(results):
            print(f"{utt_id}\t{rank}\t{res.score:.6f}\t{res.text}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    with open(args.ref, "r", encoding="utf-8") as f:
        refs = [crit.normalize_text(line) for line in f if line.strip()]
    with open(args.hyp, "r", encoding="utf-8") as f:
        hyps = [crit.normalize_text(line) for line in f if line.strip()]
    if len(refs) != len(hyps):
        raise ConfigError(
            f"reference has {len(refs)} utterances but hypothesis has {len(hyps)}"
        )
    word_dist = word_len = char_dist = char_len = 0
    for ref, hyp in zip(refs, hyps):
        word_dist += train_mod.edit_distance(ref.split(), hyp.split())
        word_len += len(ref.split())
        char_dist += train_mod.edit_distance(ref, hyp)
        char_len += len(ref)
    print(f"WER {100.0 * word_dist / max(1, word_len):.2f}%")
    print(f"LER {100.0 * char_dist / max(1, char_len):.2f}%")
    return EXIT_OK


def _cmd_lm_score(args) -> int:
    model = lm_mod.parse_arpa(args.arpa)
    if args.text is not None:
        sentences = [args.text.split()]
    else:
        with open(args.file, "r", encoding="utf-8") as f:
            sentences = [line.split() for line in f if line.strip()]
    total = 0.0
    tokens = 0
    for sent in sentences:
        lp = model.score_sentence(sent)
        total += lp
        tokens += len(sent) + 1
        print(f"{lp:.6f}\t{' '.join(sent)}")
    print(f"perplexity {10.0 ** (-total / max(1, tokens)):.6f}")
    return EXIT_OK


def _cmd_model_describe(args) -> int:
    model, transitions, header = load_checkpoint(args.ckpt)
    print(f"criterion: {header['criterion']}")
    print(f"input_dim: {header['input_dim']}")
    print("layer\tin\tout\tkw\tretain_p\tparams")
    for row in model.describe():
        print(
            f"{row['layer']}\t{row['in']}\t{row['out']}\t{row['kw']}"
            f"\t{row['retain_p']:.4f}\t{row['params']}"
        )
    n = model.n_params()
    if transitions is not None:
        n += transitions.trans.size + transitions.start.size
    print(f"total params: {n}")
    return EXIT_OK


def _cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs, losses, lers = [], [], []
    with open(args.log, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            epochs.append(rec["epoch"])
            losses.append(rec["loss"])
            lers.append(rec["train_ler"])
    if not epochs:
        raise ConfigError(f"{args.log}: no log records")
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(epochs, losses)
    ax1.set_ylabel("loss")
    ax2.plot(epochs, [100.0 * v for v in lers])
    ax2.set_ylabel("train LER (%)")
    ax2.set_xlabel("epoch")
    fig.tight_layout()
    fig.savefig(args.out, format="svg")
    plt.close(fig)
    log.info("wrote %s", args.out)
    return EXIT_OK


def _cmd_config_dump(args) -> int:
    cfg = preset_config(args.preset)
    print(json.dumps(cfg.to_dict(), indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument wiring
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="letterasr", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="extract normalized log-mel features")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory for .bin files")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("train", help="train an acoustic model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--arch", required=True, help="preset name or arch JSON file")
    p.add_argument("--criterion", choices=["ctc", "asg"], default="asg")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--clip", type=float, default=0.2)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ckpt-out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("align", help="Viterbi forced alignment")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_align)

    p = sub.add_parser("decode", help="lexicon + LM beam-search decoding")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--emissions-dir", default=None)
    p.add_argument("--criterion", choices=["ctc", "asg"], default="asg",
                   help="collapse semantics when decoding from --emissions-dir")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--arpa", required=True)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--beam-size", type=int, default=250)
    p.add_argument("--beam-threshold", type=float, default=25.0)
    p.add_argument("--merge", choices=["logadd", "max"], default="logadd")
    p.add_argument("--smear", choices=["max", "logadd"], default="max")
    p.add_argument("--nbest", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("eval", help="WER / LER between two transcript files")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("lm", help="language model utilities")
    lm_sub = p.add_subparsers(dest="lm_command", required=True)
    q = lm_sub.add_parser("score", help="score sentences and report perplexity")
    q.add_argument("--arpa", required=True)
    group = q.add_mutually_exclusive_group(required=True)
    group.add_argument("--text", default=None, help="a single sentence")
    group.add_argument("--file", default=None, help="file with one sentence per line")
    q.set_defaults(func=_cmd_lm_score)

    p = sub.add_parser("model", help="model utilities")
    model_sub = p.add_subparsers(dest="model_command", required=True)
    q = model_sub.add_parser("describe", help="print the layer table of a checkpoint")
    q.add_argument("ckpt")
    q.set_defaults(func=_cmd_model_describe)

    p = sub.add_parser("plot", help="render training curves to SVG")
    p.add_argument("--log", required=True, help="JSON-lines training log")
    p.add_argument("--out", required=True, help="output .svg path")
    p.set_defaults(func=_cmd_plot)

    p = sub.add_parser("config", help="configuration utilities")
    cfg_sub = p.add_subparsers(dest="config_command", required=True)
    q = cfg_sub.add_parser("dump", help="print a preset config as JSON")
    q.add_argument("preset")
    q.set_defaults(func=_cmd_config_dump)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        print(err.message, file=sys.stderr)
        return EXIT_USAGE
    log.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    try:
        return args.func(args)
    except NumericError as err:
        log.error("numeric failure: %s", err)
        return EXIT_NUMERIC
    except (
        ConfigError,
        DecodeError,
        feat.AudioError,
        lm_mod.ArpaParseError,
        lm_mod.MissingUnkError,
        ValueError,
        OSError,
    ) as err:
        log.error("%s", err)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
