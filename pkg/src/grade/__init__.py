"""Learned dialogue-coherence metric over utterance and topic-graph representations."""

__version__ = "0.1.0"
