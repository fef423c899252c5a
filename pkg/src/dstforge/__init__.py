"""dstforge: a small laboratory for dynamic sparse training on numpy.

Train MLPs and small convnets under prune-and-regrow sparsity schedules,
generate corrupted test sets, and analyze the trained networks in the
frequency and kernel domains.
"""

__version__ = "0.1.0"
