"""Constants shared across the simulator modules."""

# Slot structure: 48 half-hour pricing slots, each split into 2 scheduling slots
DEFAULT_PRICING_SLOTS = 48
DEFAULT_SCHEDULING_SLOTS_PER_PRICING = 2

# Pricing
PRICE_FLOOR = 1e-6
DEFAULT_PRICE_BASE = 0.1
DEFAULT_PRICE_SLOPE = 0.2

# Optimisation loop
DEFAULT_MAX_ITERATIONS = 50
DEFAULT_CONVERGENCE_EPS = 1e-6
COST_TIE_TOLERANCE = 1e-12
# Joint start combinations enumerated exhaustively once single moves settle
JOINT_SEARCH_LIMIT = 50_000

# Detection
LOG_EPSILON = 1e-8
DEFAULT_SALIENCY_WINDOW = 3
DEFAULT_THRESHOLD_PERCENTILE = 99.5
DEFAULT_KMEANS_MAX_ITERATIONS = 300
MIN_DESK_CLUSTER_COUNT = 4
FORECASTS_PER_CLUSTER = 25

# Isolation
EULER_GAMMA = 0.5772
DEFAULT_MAX_SUBSPACE = 3
DEFAULT_BEAM_WIDTH = 10
DEFAULT_ENSEMBLE_TREES = 50
DEFAULT_SUBSAMPLE_SIZE = 64
# Path-length slack (splits) for preferring larger subspaces; 0 keeps the lowest score
DEFAULT_BEAM_TOLERANCE = 0.0
DEFAULT_LOF_NEIGHBORS = 10
DEFAULT_LOF_THRESHOLD = 1.5
LOF_DENSITY_EPSILON = 1e-10

# Mitigation
DEFAULT_HISTORY_WINDOW = 4

# Injection magnitudes as fractions of controllable daily demand (0.1% to 25%)
DEFAULT_MAGNITUDE_LADDER = (
    0.001, 0.005, 0.01, 0.015, 0.02, 0.025, 0.03, 0.035, 0.04, 0.045,
    0.05, 0.06, 0.07, 0.08, 0.09, 0.10, 0.125, 0.15, 0.20, 0.25,
)

# Every generated day carries one inflexible attacker device
ATTACKER_HOUSE_ID = "attacker"
ATTACKER_APPLIANCE_ID = "attacker-device"

# Persisted documents
FORMAT_VERSION = 1

# CLI exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
