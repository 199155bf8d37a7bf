"""Letter-based speech recognition, end to end and from scratch.

Log-mel filterbank features feed a gated convolutional acoustic model
trained with either a blank-based or a transition-based sequence
criterion, and a lexicon-constrained beam search rescored by an n-gram
language model turns per-frame letter scores into words.
"""

__version__ = "0.1.0"

from .criterion import (
    LetterDict,
    TransitionTable,
    asg_loss,
    ctc_loss,
    default_letter_dict,
    forward_score,
    text_to_target,
    viterbi_align,
)
from .decoder import DecoderParams, Lexicon, beam_search, build_trie
from .features import compute_mfsc, normalize, read_wav
from .lm import NGramLM, parse_arpa
from .model import ArchSpec, GatedConvNet, load_checkpoint, save_checkpoint

__all__ = [
    "ArchSpec",
    "DecoderParams",
    "GatedConvNet",
    "LetterDict",
    "Lexicon",
    "NGramLM",
    "TransitionTable",
    "__version__",
    "asg_loss",
    "beam_search",
    "build_trie",
    "compute_mfsc",
    "ctc_loss",
    "default_letter_dict",
    "forward_score",
    "load_checkpoint",
    "normalize",
    "parse_arpa",
    "read_wav",
    "save_checkpoint",
    "text_to_target",
    "viterbi_align",
]
