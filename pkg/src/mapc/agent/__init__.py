"""Per-AP decision agents and their memories."""
from .backends import GenieBackend, HeuristicBackend, LlmBackend, ScriptedBackend, make_backend
from .core import Agent, Evaluation, Reflection, evaluate_outcome, make_knowledge_base
from .memory import Exemplar, KnowledgeBase, RoundRecord, ShortTermMemory, ltm_retrieve, ltm_update, stm_push
from .prompt import ParseFailure, build_prompt, parse_decision, render_decision, render_outcome_table

__all__ = [
    "Agent",
    "Evaluation",
    "Reflection",
    "evaluate_outcome",
    "make_knowledge_base",
    "Exemplar",
    "KnowledgeBase",
    "RoundRecord",
    "ShortTermMemory",
    "ltm_retrieve",
    "ltm_update",
    "stm_push",
    "ParseFailure",
    "build_prompt",
    "parse_decision",
    "render_decision",
    "render_outcome_table",
    "GenieBackend",
    "HeuristicBackend",
    "LlmBackend",
    "ScriptedBackend",
    "make_backend",
]
