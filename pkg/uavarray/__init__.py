"""Multi-UAV virtual array: Fekete topology, LoS MIMO channel, secure precoding and trajectory design."""
