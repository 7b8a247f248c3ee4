//! Placeholder for guide chapters.
