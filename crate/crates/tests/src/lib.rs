//! Holds the workspace acceptance gate in `tests/acceptance.rs`. The library itself is empty.
