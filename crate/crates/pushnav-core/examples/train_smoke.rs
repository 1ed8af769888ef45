//! Quick training smoke run: prints one line per iteration so learning
//! progress is visible long before a full budget completes.

use pushnav_core::ppo::{train_with_callback, TrainConfig};

fn main() {
    let budget: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(300_000);
    let cfg = TrainConfig { total_env_steps: budget, seed: 7, ..TrainConfig::default() };
    let t0 = std::time::Instant::now();
    let result = train_with_callback(&cfg, |row| {
        println!(
            "iter {:>4}  steps {:>8}  mean_r {:>8.4}  succ {:>5.3}  roll {:>5.3}  cur {}  pl {:>8.4}  vl {:>8.4}  ent {:>7.3}  [{:.0}s]",
            row.iteration,
            row.env_steps,
            row.mean_reward,
            row.success_rate,
            row.rolling_success,
            row.curriculum_index,
            row.policy_loss,
            row.value_loss,
            row.entropy,
            t0.elapsed().as_secs_f64(),
        );
    })
    .expect("training failed");
    println!(
        "done: {} env steps, rolling success {:.3}, curriculum {}, audit violations {}",
        result.env_steps,
        result.rolling_success,
        result.final_curriculum,
        result.audit.violations
    );
}
