import os
from pathlib import Path

# --- Data layout ---
SUMMER_LENGTH = 92  # Jun 1 - Aug 31
JJA_START = (6, 1)
JJA_END = (8, 31)
DEFAULT_YEAR_FROM = 1990
DEFAULT_YEAR_TO = 2011
MAX_MISSING_FRACTION = 0.5  # warn above this per summer

# --- ECA&D blended series format ---
ECAD_MISSING_VALUE = -9999
ECAD_QUALITY_VALID = 0
ECAD_QUALITY_SUSPECT = 1
ECAD_QUALITY_MISSING = 9
ECAD_TENTHS = 10.0  # TX is stored in 0.1 degC

# --- Numerics ---
XI_EXPONENTIAL_LIMIT = 1e-8
XI_BOUNDS = (-0.5, 0.5)
LOG_CDF_FLOOR = -700.0  # keeps z = -1/log F strictly positive at F == 0
BISECTION_PROB_TOL = 1e-10
BISECTION_MAX_ITER = 200

# --- Seasonal median spline ---
SPLINE_INTERIOR_KNOTS = 12
SPLINE_DEGREE = 3
SPLINE_ABS_EPS = 1e-4  # degC, smooth |r| surrogate
SPLINE_TOL = 1e-8
SPLINE_MAX_ITER = 500
SPLINE_CV_FOLDS = 5
SPLINE_SMOOTHING_GRID = tuple(10.0 ** k for k in range(-2, 5))

# --- Priors ---
THRESHOLD_QUANTILE = 0.98
LOG_SIGMA_PRIOR = (0.0, 10.0)
U_PRIOR_SD = 1.0
MU_PRIOR = (0.0, 100.0)
LOG_SIGMA_N2_PRIOR = (0.0, 10.0)
TRANSITION_BETA_PRIOR = (1.0, 1.0)

# --- MCMC ---
N_ITERATIONS = int(os.getenv("HEATWAVE_N_ITERATIONS", "50000"))
N_BURNIN = int(os.getenv("HEATWAVE_N_BURNIN", "10000"))
THINNING = int(os.getenv("HEATWAVE_THINNING", "10"))
ADAPTATION_WINDOW = 100
TARGET_ACCEPTANCE = 0.3
INITIAL_DEPENDENCE = 0.7
DEFAULT_SEED = int(os.getenv("HEATWAVE_SEED", "20131"))

# --- Weather generator ---
SUMMERS_PER_DRAW = 500
HUTH_QUANTILES = (0.975, 0.81)
WORST_EVENT_WINDOW = 3

# --- Diagnostics ---
PPC_REPLICATE_SUMMERS = 22
PPC_THRESHOLDS = (28.0, 32.0, 36.0)
PPC_LAGS = (1, 5)
PPC_EXTREMAL_QUANTILE = 0.975
PPC_INTERVAL = (0.025, 0.975)
CHI_QUANTILE_GRID = tuple(round(0.80 + 0.01 * k, 2) for k in range(20))
PACF_MAX_LAG = 10
AR_MAX_ORDER = 5

# --- Runtime ---
THREADS = int(os.getenv("HEATWAVE_THREADS", "1"))
LOG_DIR = Path(os.getenv("HEATWAVE_LOG_DIR", str(Path.home() / ".heatwave" / "logs")))
OUTPUT_SCHEMA_VERSION = "1.0"
