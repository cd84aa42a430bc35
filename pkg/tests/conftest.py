import os
import sys

# single-thread the BLAS pools before numpy loads: the models here are far
# too small to gain from threading, and the acceptance suite runs two
# training processes side by side on two cores
for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(var, "1")

sys.path.insert(0, os.path.dirname(__file__))
