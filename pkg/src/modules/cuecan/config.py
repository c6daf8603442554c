"""CueCAn unit configuration."""

# Pooled feature rows before context filling
POOLED_ROWS = 8

# Filling kernel sizes accepted by build_mask and the config grammar
SUPPORTED_KERNELS = (3, 5, 7)

# Widest band of zeroed central rows/columns for center-masked kernels
CENTER_BAND_MAX = 3

# Encoder blocks covered by three- and five-token config strings
DEFAULT_BLOCKS = (3, 4, 5)
ALL_BLOCKS = (1, 2, 3, 4, 5)

# One token: kernel size plus optional "e" for edge-only filling
TOKEN_PATTERN = r"([357])(e?)"

# Configurations evaluated in the classification comparison
KNOWN_CONFIGS = ("333", "553", "753", "5e53", "5e5e3")
