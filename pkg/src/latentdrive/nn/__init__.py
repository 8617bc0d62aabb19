"""Neural-network primitives, layers, checkpoints and gradient checks."""
