//! Logger that forwards to `env_logger` and keeps every warning so it can be
//! copied into the run report.

use std::sync::{Mutex, OnceLock};

use log::{Level, Log, Metadata, Record};

static CAPTURED: Mutex<Vec<String>> = Mutex::new(Vec::new());
static INSTALLED: OnceLock<()> = OnceLock::new();

struct Capture {
    inner: env_logger::Logger,
}

impl Log for Capture {
    fn enabled(&self, metadata: &Metadata<'_>) -> bool {
        metadata.level() <= Level::Warn || self.inner.enabled(metadata)
    }

    fn log(&self, record: &Record<'_>) {
        if record.level() <= Level::Warn {
            if let Ok(mut v) = CAPTURED.lock() {
                v.push(record.args().to_string());
            }
        }
        if self.inner.enabled(record.metadata()) {
            self.inner.log(record);
        }
    }

    fn flush(&self) {
        self.inner.flush();
    }
}

/// Installs the capturing logger once; `RUST_LOG` controls what is printed
/// (warnings by default).
pub fn init() {
    INSTALLED.get_or_init(|| {
        let inner = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).build();
        let max = inner.filter().max(log::LevelFilter::Warn);
        if log::set_boxed_logger(Box::new(Capture { inner })).is_ok() {
            log::set_max_level(max);
        }
    });
}

/// Takes the warnings logged since the last call.
pub fn drain() -> Vec<String> {
    CAPTURED.lock().map(|mut v| std::mem::take(&mut *v)).unwrap_or_default()
}
