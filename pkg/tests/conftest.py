import os

# Single-threaded BLAS: the models are small, so GEMM thread fan-out costs
# more than it saves, and one thread keeps training bit-reproducible.
# Must happen before numpy first loads the BLAS backend.
for var in (
    "OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
):
    os.environ.setdefault(var, "1")
