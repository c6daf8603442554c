# Network modules
