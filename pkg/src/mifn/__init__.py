"""Cross-domain sequential recommender mixing behavioral and knowledge flow."""

__version__ = "0.1.0"
