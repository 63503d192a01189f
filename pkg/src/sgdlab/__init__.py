"""sgdlab: how much privacy does the randomness of SGD buy on a given dataset?

The package measures the seed-induced variability of SGD relative to its
sensitivity to single-example changes, converts the two into an intrinsic
epsilon through the Gaussian-mechanism relation, and releases output-perturbed
models whose added noise is reduced by the intrinsic noise already present.
"""

__version__ = "0.1.0"
