# Core tensor engine
