//! Progress reporting for long-running stages.
//!
//! Lines go to standard error in a machine-greppable shape:
//! `STAGE <name> <pct> elapsed <secs>s`. Quiet mode suppresses output but
//! never changes results.

use std::time::Instant;

#[derive(Debug, Clone)]
pub struct Progress {
    quiet: bool,
    started: Instant,
}

impl Progress {
    pub fn new(quiet: bool) -> Self {
        Progress {
            quiet,
            started: Instant::now(),
        }
    }

    pub fn quiet() -> Self {
        Self::new(true)
    }

    pub fn stage(&self, name: &str, pct: f64) {
        if self.quiet {
            return;
        }
        let elapsed = self.started.elapsed().as_secs_f64();
        eprintln!(
            "STAGE {} {:.0} elapsed {:.1}s",
            name,
            pct.clamp(0.0, 100.0),
            elapsed
        );
    }

    pub fn warn(&self, message: &str) {
        if !self.quiet {
            eprintln!("WARN {}", message);
        }
    }
}

impl Default for Progress {
    fn default() -> Self {
        Self::quiet()
    }
}
