//! Policy checkpoint serialization and the learning-curve log.
//!
//! Checkpoint layout: magic, format version, frame-stack depth, observation
//! layout hash, actor/critic layer dims, then every parameter as
//! little-endian f32 in the canonical flattening order.

use super::net::PolicyNet;
use crate::pushenv::OBS_DIM;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"PNAVCKPT";
const VERSION: u32 = 1;

/// Canonical description of the observation layout; hashing it ties a
/// checkpoint to the observation format it was trained on.
const OBS_LAYOUT: &str = "A:p_obj,eta_obj,p_goal,eta_goal,p_ee,eta_ee;E:p_obj,p_goal;stage_flag";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    Format(&'static str),
    #[error("checkpoint was written for a different observation layout")]
    LayoutMismatch,
}

/// FNV-1a, enough to fingerprint the layout string and dimension.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn obs_layout_hash(frame_stack: usize) -> u64 {
    fnv1a(format!("{OBS_LAYOUT}|dim={OBS_DIM}|k={frame_stack}").as_bytes())
}

pub fn save_checkpoint(
    path: &Path,
    net: &PolicyNet<f32>,
    frame_stack: usize,
) -> Result<(), CheckpointError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(frame_stack as u32).to_le_bytes());
    buf.extend_from_slice(&obs_layout_hash(frame_stack).to_le_bytes());

    let write_dims = |buf: &mut Vec<u8>, dims: &[usize]| {
        buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
    };
    write_dims(&mut buf, &net.actor.dims());
    write_dims(&mut buf, &net.critic.dims());

    let mut flat = Vec::new();
    net.flatten(&mut flat);
    buf.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for v in &flat {
        buf.extend_from_slice(&v.to_le_bytes());
    }

    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(PolicyNet<f32>, usize), CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
        if *pos + n > bytes.len() {
            return Err(CheckpointError::Format("truncated file"));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };

    if take(&mut pos, 8)? != MAGIC {
        return Err(CheckpointError::Format("bad magic"));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
    if u32_at(take(&mut pos, 4)?) != VERSION {
        return Err(CheckpointError::Format("unsupported version"));
    }
    let frame_stack = u32_at(take(&mut pos, 4)?) as usize;
    let hash = u64::from_le_bytes(take(&mut pos, 8)?.try_into().expect("8 bytes"));
    if hash != obs_layout_hash(frame_stack) {
        return Err(CheckpointError::LayoutMismatch);
    }

    let read_dims = |pos: &mut usize| -> Result<Vec<usize>, CheckpointError> {
        let n = u32_at(take(pos, 4)?) as usize;
        if n < 2 || n > 16 {
            return Err(CheckpointError::Format("implausible layer count"));
        }
        let mut dims = Vec::with_capacity(n);
        for _ in 0..n {
            dims.push(u32_at(take(pos, 4)?) as usize);
        }
        Ok(dims)
    };
    let actor_dims = read_dims(&mut pos)?;
    let critic_dims = read_dims(&mut pos)?;
    if critic_dims.last() != Some(&1) {
        return Err(CheckpointError::Format("critic must end in one output"));
    }
    if actor_dims[0] != critic_dims[0] {
        return Err(CheckpointError::Format("actor/critic input mismatch"));
    }
    let hidden: Vec<usize> = actor_dims[1..actor_dims.len() - 1].to_vec();
    let act_dim = *actor_dims.last().expect("actor dims");
    let mut net = PolicyNet::<f32>::new(actor_dims[0], act_dim, &hidden, 0);
    if net.critic.dims() != critic_dims {
        return Err(CheckpointError::Format("critic dims disagree with actor trunk"));
    }

    let n = u64::from_le_bytes(take(&mut pos, 8)?.try_into().expect("8 bytes")) as usize;
    if n != net.n_params() {
        return Err(CheckpointError::Format("parameter count mismatch"));
    }
    let mut flat = Vec::with_capacity(n);
    for _ in 0..n {
        flat.push(f32::from_le_bytes(take(&mut pos, 4)?.try_into().expect("4 bytes")));
    }
    net.unflatten(&flat);
    Ok((net, frame_stack))
}

/// One learning-curve row, logged once per training iteration.
#[derive(Debug, Clone)]
pub struct CurveRow {
    pub iteration: usize,
    pub env_steps: u64,
    pub mean_reward: f64,
    pub success_rate: f64,
    pub rolling_success: f64,
    pub curriculum_index: u8,
    pub reward_mode: &'static str,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

pub fn write_curve_csv<W: Write>(mut w: W, rows: &[CurveRow]) -> std::io::Result<()> {
    writeln!(
        w,
        "iteration,env_steps,mean_reward,success_rate,rolling_success,curriculum_index,reward_mode,policy_loss,value_loss,entropy"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.env_steps,
            r.mean_reward,
            r.success_rate,
            r.rolling_success,
            r.curriculum_index,
            r.reward_mode,
            r.policy_loss,
            r.value_loss,
            r.entropy
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let net = PolicyNet::<f32>::new(125, 6, &[128, 128], 42);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.ckpt");
        save_checkpoint(&path, &net, 5).unwrap();
        let (loaded, k) = load_checkpoint(&path).unwrap();
        assert_eq!(k, 5);
        let mut a = Vec::new();
        let mut b = Vec::new();
        net.flatten(&mut a);
        loaded.flatten(&mut b);
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );

        // Identical outputs on a probe input.
        let x: Vec<f32> = (0..125).map(|i| (i as f32 * 0.01).sin()).collect();
        let ya = net.actor.forward(&x);
        let yb = loaded.actor.forward(&x);
        assert_eq!(
            ya.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            yb.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn corrupted_checkpoint_is_rejected() {
        let net = PolicyNet::<f32>::new(25, 6, &[8], 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.ckpt");
        save_checkpoint(&path, &net, 1).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Format(_))));
    }

    #[test]
    fn curve_csv_has_one_row_per_iteration() {
        let rows = vec![CurveRow {
            iteration: 0,
            env_steps: 6400,
            mean_reward: 0.25,
            success_rate: 0.5,
            rolling_success: 0.5,
            curriculum_index: 1,
            reward_mode: "two_stage",
            policy_loss: 0.01,
            value_loss: 0.2,
            entropy: 8.0,
        }];
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().starts_with("0,6400,0.25,0.5"));
    }
}
