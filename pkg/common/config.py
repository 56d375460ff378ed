# Field
# Runtime modulus: 2^64 - 2^32 + 1, 2-adicity 32.
DEFAULT_MODULUS = 2**64 - 2**32 + 1
# Hand-checkable modulus used by documentation and unit examples.
EXAMPLE_MODULUS = 17
FIELD_ELEMENT_BYTES = 8

# Proof system caps (desk scale)
MAX_CONSTRAINTS = 2**12
MAX_DLOG_ORDER = 2**20
DEFAULT_SECURITY = 128

# Simulation (logical ticks)
STEP_TIMEOUT_TICKS = 50
MESSAGE_LATENCY_TICKS = 1
# Ticks between a confirmed deposit and the producer's data emission.
DATA_DELAY_TICKS = 3
# Upper bound on ticks a single session may run before the world gives up.
SESSION_TICK_BUDGET = 2000

# Actor names that are not configured per scenario
RELAYER_ID = "relayer"
ESCROW_ID = "escrow"
CLOCK_ID = "clock"

# Run artifacts
RUN_DIR = 'runs'
MAX_FRAME_SIZE = 16 * 1024 * 1024
