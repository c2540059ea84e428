//! Worker-pool sizing from `SSHD_THREADS`.

use crate::error::{config, Result};

pub const THREADS_VAR: &str = "SSHD_THREADS";

/// Parses `SSHD_THREADS`; `None` when unset or empty.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(config(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
        _ => Ok(None),
    }
}

/// Sizes the global worker pool once per process. One thread makes every
/// reduction order fixed. Returns the pool size in effect.
pub fn configure_threads(threads: Option<usize>) -> usize {
    if let Some(n) = threads {
        // a pool built earlier in the process stays in effect
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    rayon::current_num_threads()
}
