"""memoir: a self-organizing conversational memory engine.

Message streams are segmented into coherent episodes, narrated into episodic
memories, and mined for semantic knowledge by predicting each new episode
from what is already known and distilling the gap. Both memory stores sit
behind one dense-vector retrieval function that assembles query-time
contexts for downstream question answering.
"""

from .engine import IngestReport, MemoryEngine
from .evaluate import EvalCase, run_eval
from .gateway import HttpBackend, HttpBackendConfig, LLMGateway, ScriptedBackend, load_script
from .metrics import bleu1, token_f1
from .model import BoundaryDecision, EngineConfig, Episode, Message, Role, SemanticFact, validate_config
from .retrieval import MemoryContext, cosine_similarity, retrieve
from .segmentation import SegmentationOutcome, should_trigger
from .transcript import Transcript, load_transcript

__version__ = "0.1.0"

__all__ = [
    "BoundaryDecision",
    "EngineConfig",
    "Episode",
    "EvalCase",
    "HttpBackend",
    "HttpBackendConfig",
    "IngestReport",
    "LLMGateway",
    "MemoryContext",
    "MemoryEngine",
    "Message",
    "Role",
    "ScriptedBackend",
    "SegmentationOutcome",
    "SemanticFact",
    "Transcript",
    "bleu1",
    "cosine_similarity",
    "load_script",
    "load_transcript",
    "retrieve",
    "run_eval",
    "should_trigger",
    "token_f1",
    "validate_config",
]
