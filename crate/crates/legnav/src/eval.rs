//! Placeholder while the module is under construction.
