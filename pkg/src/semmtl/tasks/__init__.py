"""Task models: sequence tagger, dependency parser, NLI."""
from .base import ModelConfig, SequenceModel
from .mst import is_tree, mst_decode
from .nli import NliModel, nli_forward, pretrain_aux_encoder
from .parser import ParserModel, biaffine_arc_scores, parse_forward
from .tagger import TaggerModel, tag_forward

__all__ = ["ModelConfig", "SequenceModel", "TaggerModel", "ParserModel", "NliModel", "tag_forward",
           "parse_forward", "nli_forward", "biaffine_arc_scores", "mst_decode", "is_tree",
           "pretrain_aux_encoder"]
