"""lemmaforge - Decompose Lean 4 proofs into lemma datasets and evaluate provers on them."""

__version__ = "0.1.0"
