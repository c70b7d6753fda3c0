"""Numerics: the network, confidence estimators, distortions and attacks."""
