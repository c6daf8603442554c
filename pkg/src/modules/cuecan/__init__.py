# Cue-driven contextual attention unit
