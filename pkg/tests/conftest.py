"""Pytest wiring shared by the whole suite."""

from hypothesis import settings

# The sandbox runs cold numpy imports slowly enough to trip hypothesis'
# default per-example deadline; wall-clock limits live in the acceptance
# tests instead.
settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")
