"""Iterative visual-semantic alignment for low-resource word recognition.

A small numpy recognizer supplies visual descriptors, an edit-distance MDS
embedding places the lexicon in a Euclidean space, entropic optimal
transport couples the two under a word-frequency prior, and the most
confident matches become pseudo-labels round after round.
"""

__version__ = "0.1.0"
