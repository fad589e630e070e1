"""Two-party transfer learning with an MMD alignment loss computed under additive HE."""

__version__ = "0.1.0"
