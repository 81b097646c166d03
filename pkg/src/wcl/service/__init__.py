"""HTTP service wrapping the solver library."""
