"""Toolkit for benchmarking hierarchical knowledge navigation in language models.

Submodules:
    taxonomy      coded-hierarchy ingestion and structural queries
    metrics       path matching scores, accuracy statistics, majority voting
    taskgen       MCQ / nearest-common-ancestor task and probe generation
    prompts       prompt template rendering and response parsing
    gateway       chat-completion clients, response cache, scripted mocks
    orchestrator  experiment execution, scoring, report bundles
    dumps         binary activation-dump file format
    repr_analysis layer-wise representation similarity curves
"""

__version__ = "0.1.0"
