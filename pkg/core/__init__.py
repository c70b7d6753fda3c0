"""Settings, errors, logging and the shared sweep executor."""
