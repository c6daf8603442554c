# Cue classifier, missing-sign segmenter, Grad-CAM
