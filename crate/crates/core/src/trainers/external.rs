use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{parse_response, write_bundle, RESPONSE_FILE};
use super::{Trainer, TrainerError, TrainerRequest, TrainerResponse};
use crate::sampler::SampledManifest;

/// Placeholder replaced by the bundle directory in the command template.
pub const BUNDLE_PLACEHOLDER: &str = "{bundle}";

const STDOUT_LOG: &str = "stdout.log";
const STDERR_LOG: &str = "stderr.log";
const DIAGNOSTIC_TAIL: usize = 4096;

/// Runs an external command once per iteration, exchanging files through a bundle directory.
#[derive(Debug, Clone)]
pub struct ExternalTrainer {
    command: Vec<String>,
    timeout: Duration,
    work_dir: PathBuf,
}

impl ExternalTrainer {
    /// `command` is an argv template; `{bundle}` is substituted, otherwise the
    /// bundle path is appended as the last argument.
    pub fn new(command: Vec<String>, timeout: Duration, work_dir: impl Into<PathBuf>) -> Self {
        Self { command, timeout, work_dir: work_dir.into() }
    }

    pub fn bundle_dir(&self, iteration: u64) -> PathBuf {
        self.work_dir.join(format!("iter_{iteration:05}"))
    }

    fn argv(&self, bundle: &Path) -> Vec<String> {
        let bundle = bundle.to_string_lossy();
        let mut substituted = false;
        let mut argv: Vec<String> = self
            .command
            .iter()
            .map(|a| {
                if a.contains(BUNDLE_PLACEHOLDER) {
                    substituted = true;
                    a.replace(BUNDLE_PLACEHOLDER, &bundle)
                } else {
                    a.clone()
                }
            })
            .collect();
        if !substituted {
            argv.push(bundle.into_owned());
        }
        argv
    }

    /// Writes the bundle, runs the command and parses the validated response.
    pub fn invoke(&self, sample: &SampledManifest, request: &TrainerRequest) -> Result<TrainerResponse, TrainerError> {
        let bundle = self.bundle_dir(request.iteration);
        if bundle.exists() {
            fs::remove_dir_all(&bundle)?;
        }
        write_bundle(&bundle, sample, request)?;

        let argv = self.argv(&bundle);
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| TrainerError::NonZeroExit { code: None, diagnostics: "empty trainer command".into() })?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::null())
            .stdout(fs::File::create(bundle.join(STDOUT_LOG))?)
            .stderr(fs::File::create(bundle.join(STDERR_LOG))?)
            .spawn()
            .map_err(|e| TrainerError::NonZeroExit {
                code: None,
                diagnostics: format!("cannot launch `{program}`: {e}"),
            })?;

        let started = Instant::now();
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if started.elapsed() >= self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                return Err(TrainerError::Timeout(self.timeout));
            }
            thread::sleep(Duration::from_millis(5));
        };
        if !status.success() {
            return Err(TrainerError::NonZeroExit { code: status.code(), diagnostics: tail(&bundle.join(STDERR_LOG)) });
        }
        let bytes = fs::read(bundle.join(RESPONSE_FILE))
            .map_err(|e| TrainerError::MalformedResponse(format!("cannot read {RESPONSE_FILE}: {e}")))?;
        let mut response = parse_response(&bytes, request)?;
        if response.meta.wall_time_seconds <= 0.0 {
            response.meta.wall_time_seconds = started.elapsed().as_secs_f64();
        }
        Ok(response)
    }
}

impl Trainer for ExternalTrainer {
    fn train(&mut self, sample: &SampledManifest, request: &TrainerRequest) -> Result<TrainerResponse, TrainerError> {
        self.invoke(sample, request)
    }
}

fn tail(path: &Path) -> String {
    let text = fs::read(path).map(|b| String::from_utf8_lossy(&b).into_owned()).unwrap_or_default();
    let text = text.trim_end();
    let mut start = text.len().saturating_sub(DIAGNOSTIC_TAIL);
    while !text.is_char_boundary(start) {
        start += 1;
    }
    text[start..].to_string()
}
