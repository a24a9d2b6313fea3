"""Kriging of large spatial datasets with a sparse (tapered) + low-rank covariance."""
import os

import numba

# the portable layer; avoids probing system TBB builds of the wrong version
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "workqueue"

__version__ = "0.1.0"
