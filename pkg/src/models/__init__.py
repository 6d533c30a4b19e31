"""Domain records, networks and checkpoints."""
