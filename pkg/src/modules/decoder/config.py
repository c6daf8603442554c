"""Decoder configuration."""

# Encoder blocks whose pooled maps are scored (strides 8, 16, 32)
SKIP_BLOCKS = (3, 4, 5)

# Learnable 2x upsampling stages (transposed convolutions)
UPSAMPLE_KERNEL = 4
UPSAMPLE_STRIDE = 2
UPSAMPLE_PADDING = 1

# Fixed bilinear factor from the fused stride-8 map to the input size
FINAL_UPSAMPLE = 8

# Single foreground class (missing sign), sigmoid output
NUM_CLASSES = 1
