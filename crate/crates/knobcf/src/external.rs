//! Backends that live outside the process, plus wall-clock helpers.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use knobcf_core::gmm::CategoryLabel;
use knobcf_core::knob::{KnobConfiguration, KnobSpace};
use knobcf_core::orchestrator::Clock;
use knobcf_core::sim::{BackendError, EvaluationBackend, EvaluationResult};

use crate::formats::write_json;

/// Runs `<program> <args..> --config <file> --query <id>` once per query
/// evaluation and reads `latency_seconds=<decimal>` from the last line of
/// standard output. Invocations are serialized.
#[derive(Debug)]
pub struct CommandBackend {
    program: String,
    args: Vec<String>,
    space: KnobSpace,
    scratch: PathBuf,
    lock: Mutex<()>,
}

impl CommandBackend {
    /// `command` is the program followed by fixed arguments; configuration
    /// files are written under `scratch`.
    pub fn new(command: &[String], space: KnobSpace, scratch: &Path) -> Result<CommandBackend, BackendError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| BackendError::Command("empty command".into()))?;
        std::fs::create_dir_all(scratch).map_err(|e| BackendError::Command(format!("{}: {e}", scratch.display())))?;
        Ok(CommandBackend {
            program: program.clone(),
            args: args.to_vec(),
            space,
            scratch: scratch.to_path_buf(),
            lock: Mutex::new(()),
        })
    }
}

/// Parses the latency from command output.
pub fn parse_latency_line(stdout: &str) -> Result<f64, BackendError> {
    let last = stdout
        .lines()
        .map(str::trim)
        .rfind(|l| !l.is_empty())
        .ok_or_else(|| BackendError::Command("no output".into()))?;
    let value = last
        .strip_prefix("latency_seconds=")
        .ok_or_else(|| BackendError::Command(format!("last output line `{last}` lacks `latency_seconds=`")))?;
    let latency: f64 = value
        .trim()
        .parse()
        .map_err(|_| BackendError::Command(format!("unparseable latency `{value}`")))?;
    if latency.is_finite() && latency > 0.0 {
        Ok(latency)
    } else {
        Err(BackendError::BadLatency(latency))
    }
}

impl EvaluationBackend for CommandBackend {
    fn evaluate(&self, config: &KnobConfiguration, query: &str, _trial: u64) -> Result<EvaluationResult, BackendError> {
        self.space.check(config)?;
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let file = self.scratch.join("config.json");
        write_json(&file, config).map_err(|e| BackendError::Command(e.to_string()))?;
        let start = Instant::now();
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg("--config")
            .arg(&file)
            .arg("--query")
            .arg(query)
            .output()
            .map_err(|e| BackendError::Command(format!("{}: {e}", self.program)))?;
        let wall_cost = start.elapsed().as_secs_f64();
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(BackendError::Command(format!("{} exited with {}: {}", self.program, output.status, stderr.trim())));
        }
        let latency = parse_latency_line(&String::from_utf8_lossy(&output.stdout))?;
        Ok(EvaluationResult {
            latency,
            regime: None,
            wall_cost,
        })
    }
}

/// Sleeps for each result's wall cost, pacing a simulator in real time.
#[derive(Debug, Clone)]
pub struct Paced<B>(pub B);

impl<B: EvaluationBackend> EvaluationBackend for Paced<B> {
    fn evaluate(&self, config: &KnobConfiguration, query: &str, trial: u64) -> Result<EvaluationResult, BackendError> {
        let result = self.0.evaluate(config, query, trial)?;
        if result.wall_cost > 0.0 && result.wall_cost.is_finite() {
            std::thread::sleep(Duration::from_secs_f64(result.wall_cost));
        }
        Ok(result)
    }

    fn true_label(&self, config: &KnobConfiguration, query: &str, width: usize) -> Option<CategoryLabel> {
        self.0.true_label(config, query, width)
    }
}

/// Seconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn new() -> WallClock {
        WallClock(Instant::now())
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
