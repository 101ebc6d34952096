"""Session lifecycle: simulation, JSONL record/replay, live service, CLI."""
