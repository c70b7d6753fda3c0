"""Dataset IO, persistence, experiment runs and plotting."""
