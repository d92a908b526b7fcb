"""Layered SVM intrusion detection for a multiagent remote-healthcare system."""

__version__ = "0.1.0"
