# Scaled-down VGG encoder
