"""Encoder configuration."""

# Output channels of blocks 1-5 (two 3x3 conv + ReLU layers each)
BLOCK_WIDTHS = (8, 16, 32, 64, 64)

# Convolutions per block
CONVS_PER_BLOCK = 2

# Max-pool window/stride after every block
POOL_SIZE = 2

# Input height and width must be multiples of this (five 2x poolings)
INPUT_MULTIPLE = 32

# RGB input
INPUT_CHANNELS = 3
