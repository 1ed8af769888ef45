//! Policy sources for evaluation and navigation: a trained checkpoint or
//! the built-in scripted pusher used as a privileged upper-bound reference.

use pushnav_core::navexec::ScriptedPusher;
use pushnav_core::ppo::checkpoint::load_checkpoint;
use pushnav_core::ppo::net::PolicyNet;
use pushnav_core::ppo::{PolicyPusher, PushPolicy};
use std::path::{Path, PathBuf};

use crate::CliError;

pub enum PolicySource {
    Oracle,
    Checkpoint(PathBuf),
}

impl PolicySource {
    /// Resolves the mutually exclusive `--checkpoint` / `--oracle` flags.
    pub fn from_flags(checkpoint: Option<PathBuf>, oracle: bool) -> Result<PolicySource, CliError> {
        match (checkpoint, oracle) {
            (Some(p), false) => Ok(PolicySource::Checkpoint(p)),
            (None, true) => Ok(PolicySource::Oracle),
            _ => Err(CliError::Validation(
                "pass exactly one of --checkpoint <file> or --oracle".into(),
            )),
        }
    }

    /// Loads the source, checking a checkpoint's observation layout against
    /// the configured frame stack.
    pub fn load(&self, expected_frame_stack: usize) -> Result<LoadedPolicy, CliError> {
        match self {
            PolicySource::Oracle => Ok(LoadedPolicy::Oracle),
            PolicySource::Checkpoint(path) => {
                let (net, frame_stack) = load_checkpoint(path).map_err(|e| {
                    CliError::Validation(format!("checkpoint {}: {e}", path.display()))
                })?;
                if frame_stack != expected_frame_stack {
                    return Err(CliError::Validation(format!(
                        "checkpoint {} was written for a different observation layout \
                         (frame stack {frame_stack}, configured {expected_frame_stack})",
                        path.display()
                    )));
                }
                Ok(LoadedPolicy::Net { net, frame_stack })
            }
        }
    }

    pub fn input_path(&self) -> Option<&Path> {
        match self {
            PolicySource::Oracle => None,
            PolicySource::Checkpoint(p) => Some(p),
        }
    }
}

pub enum LoadedPolicy {
    Oracle,
    Net { net: PolicyNet<f32>, frame_stack: usize },
}

impl LoadedPolicy {
    /// Runs `f` with a fresh pusher. Each call starts from a clean episode
    /// state, so repeated runs are independent and deterministic.
    pub fn with_pusher<R>(&self, f: impl FnOnce(&mut dyn PushPolicy) -> R) -> R {
        match self {
            LoadedPolicy::Oracle => f(&mut ScriptedPusher::new()),
            LoadedPolicy::Net { net, frame_stack } => {
                f(&mut PolicyPusher::new(net, *frame_stack))
            }
        }
    }
}
