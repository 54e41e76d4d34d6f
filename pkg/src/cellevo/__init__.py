"""cellevo: evolves character-level CNN architectures by genetic programming.

Genotypes are binary program trees over two cell-division operations (SEQ
adds depth, PAR adds width).  Decoding a genotype grows a DAG of
convolutional cells from a one-cell ancestor network; the built-in numpy
backprop engine trains the result under a configurable surrogate budget.
An evolutionary search and a random-sampling baseline share the encoding
and are compared with a paired Wilcoxon signed-rank test.
"""

from cellevo.errors import ConfigError

__version__ = "0.1.0"

__all__ = ["ConfigError", "__version__"]
