"""frontforge: front-running attack mining and vulnerability localization
over a deterministic mini contract VM, plus benchmark construction and
detector evaluation tooling."""

__version__ = "0.1.0"
