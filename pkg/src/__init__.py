# CueCAn missing traffic sign pipeline

__version__ = "0.1.0"
