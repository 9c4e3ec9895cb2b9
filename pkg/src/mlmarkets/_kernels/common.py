LOG = 0
ISO = 1
EXP = 2

STATUS_CONVERGED = 0
STATUS_MAX_ITERS = 1
STATUS_NEGATIVE_DEMAND = 2

INIT_MIXTURE = 0
INIT_UNIFORM = 1

# below this |d| the gap (1+d)log1p(d) - d is evaluated by its Taylor series
SERIES_CUTOFF = 1e-4
