#![allow(dead_code)]

use prls_lab::config::RunConfig;
use prls_lab::trainer::IterationRecord;

/// A configuration small enough to train in seconds: a narrow generator and
/// discriminator on short synthetic clips.
pub fn tiny_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.data.train_clips = 6;
    c.data.test_clips = 2;
    c.data.clip_seconds = 0.3;
    c.data.segment_length = 2048;
    c.data.batch_size = 2;
    c.data.heldout_segments = 2;
    c.model.melgan_base_channels = 16;
    c.model.disc_channels = 8;
    c.trainer.total_iterations = 12;
    c.trainer.d_start_iteration = 6;
    c.trainer.log_interval = 3;
    c.trainer.checkpoint_interval = 0;
    c
}

/// Every logged number except wall time, in a fixed order.
pub fn numbers(r: &IterationRecord) -> Vec<Option<f64>> {
    vec![
        Some(r.g_loss),
        Some(r.stft_loss),
        r.g_adv_loss,
        r.d_loss,
        Some(r.g_grad_norm),
        Some(r.g_grad_norm_clipped),
        r.d_grad_norm,
        r.d_grad_norm_clipped,
        r.real_score,
        r.fake_score,
        Some(r.lr_g),
        Some(r.lr_d),
        r.heldout_stft,
    ]
}
