# Losses, optimizer, metrics and training loops
