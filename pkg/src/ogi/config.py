"""Default tunables, collected so scenarios and tests share one source."""

from .clock import NS_PER_MS

# weighting and routing
PRUNE_THRESHOLD = 0.1
TEMPERATURE = 1.0
PROFILE_CAP = 2.0

# short-term memory
STM_CAPACITY = 256
CONSOLIDATION_THRESHOLD = 0.6

# long-term memory
STRENGTHEN_RATE = 0.2
DECAY_RATE_PER_S = 1e-3
STRENGTH_FLOOR = 0.02
LINK_THRESHOLD = 0.5

# autonomous area
MATCH_THRESHOLD = 0.5
STEP_INTERVAL_NS = 10 * NS_PER_MS
STEP_FAIL_BUDGET = 3

# executive
HEARTBEAT_NS = 100 * NS_PER_MS
RECALL_LIMIT = 3

# fabric
GAP_BUDGET = 64
LANE_COUNT = 1
CAPACITY_INTERRUPT = 256
CAPACITY_CONTROL = 256
CAPACITY_DATA = 1024

# io integration
RATE_LIMIT_PER_S = 1000

# control service
TELEMETRY_BUFFER = 256

# entry strengths by author, used when staging well-known records
STRENGTH_PERCEPT = 0.5
STRENGTH_STATUS = 0.3
STRENGTH_INTERRUPT = 0.8
STRENGTH_DIRECTIVE = 0.5
