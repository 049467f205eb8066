"""Truncated continuous exponential weights for adversarial linear contextual bandits."""
