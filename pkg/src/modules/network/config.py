"""Network configuration."""

# Classifier head: global average pool -> linear -> one logit
HEAD_OUTPUTS = 1

# Probability threshold for a positive cue / missing-sign pixel
DECISION_THRESHOLD = 0.5

# Model kinds written into checkpoint manifests
CLASSIFIER_KIND = "cue-classifier"
SEGMENTER_KIND = "missing-sign-segmenter"
