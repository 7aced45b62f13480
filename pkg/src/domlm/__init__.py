"""Desk-scale toolkit for multilingual domain-specific language model pretraining.

Composes budgeted pretraining corpora from domain and general pools,
continue-pretrains a small transformer encoder with masked language
modeling (full-model or adapter-based), fine-tunes for NER and sentence
classification, and runs cross-lingual retrieval and tokenizer-quality
analyses.
"""

__version__ = "0.1.0"
