//! Subcommand implementations.

pub mod enhance;
pub mod evaluate;
pub mod oracle;
pub mod prepare;
pub mod train;

/// Exit code contract: 0 full success, 1 config errors, 2 partial
/// per-entry failures.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
