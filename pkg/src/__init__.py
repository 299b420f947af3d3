"""
topoprobe: GPU memory topology discovery through pointer-chase microbenchmarks
"""

__version__ = "0.1.0"
