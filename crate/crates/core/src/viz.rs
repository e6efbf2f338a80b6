//! Visualization helpers (filled in with the CLI).
