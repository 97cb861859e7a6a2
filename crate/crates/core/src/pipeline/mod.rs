//! File formats, the model registry and the command-line driver.

pub mod cli;
pub mod csv_batch;
pub mod emb1;
pub mod registry;

/// Thread cap read from `LIDAR_THREADS`; `0` or unset means one per core.
pub fn thread_count() -> usize {
    std::env::var("LIDAR_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0)
}
