"""Command-line surface: argparse grammar and thin command handlers."""
