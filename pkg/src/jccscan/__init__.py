"""Find macro-fusible conditional jumps whose placement forces slow front-end paths."""
from .fusion import ArchProfile, builtin_profile, is_fusible_pair, load_profile
from .insn import AdjacentPair, InstructionRecord, decode_stream, find_adjacent_pairs
from .loader import CodeSection, load_sections
from .placement import OffsetAnalysis, PlacementClass, classify, probability_bounds, slow_offsets
from .report import BinaryReport, CorpusReport, aggregate, analyze_binary, render, suggest_padding

__version__ = "0.1.0"
