"""Numerical core of the unified visual tokenizer."""
