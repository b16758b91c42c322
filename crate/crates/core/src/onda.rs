//! Online re-estimation of batch-norm statistics from a stream of frames.
//!
//! Starting from the source-trained globals, every frame is classified with the
//! current `(μ_t, σ²_t)` while the activations entering each BN layer are
//! buffered. After `n_t` frames the window's population mean and variance are
//! folded into the globals of all layers at once:
//!
//! ```text
//! σ²_t = (1−α)·σ²_{t−1} + α·n_t/(n_t−1)·σ̂²_t
//! μ_t  = (1−α)·μ_{t−1}  + α·μ̂_t
//! ```
//!
//! Weights, γ and β are never touched. A trailing window shorter than `n_t` is
//! discarded at the end of a stream.

use serde::{Deserialize, Serialize};

use crate::batchnorm::{batch_stats, ema_update, BnStats};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{evaluate, forward, Params, Regime};
use crate::tensor::{argmax_rows, Tensor};

/// Stream fractions at which model quality is reported.
pub const CHECKPOINT_FRACTIONS: [f64; 3] = [0.25, 0.50, 0.90];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptationConfig {
    /// Frames per statistics update.
    pub n_t: usize,
    /// Weight of each new window estimate.
    pub alpha: f64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            n_t: 10,
            alpha: 0.1,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_t < 2 {
            return Err(Error::Config(format!(
                "n_t must be at least 2, got {}",
                self.n_t
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationState {
    /// Current global statistics, one entry per BN layer.
    pub stats: Vec<BnStats>,
    /// Buffered pre-normalization activations of the open window, row-major per layer.
    window: Vec<Vec<f64>>,
    frames_in_window: usize,
    updates_done: usize,
}

impl AdaptationState {
    /// State at `t = 0`: the source-trained globals and an empty window.
    pub fn new(source_globals: Vec<BnStats>) -> Self {
        let window = vec![Vec::new(); source_globals.len()];
        Self {
            stats: source_globals,
            window,
            frames_in_window: 0,
            updates_done: 0,
        }
    }

    pub fn frames_in_window(&self) -> usize {
        self.frames_in_window
    }

    pub fn updates_done(&self) -> usize {
        self.updates_done
    }
}

/// Folds one complete window into the globals of every layer.
///
/// `windows[l]` is the `n_t × K_l` matrix of activations entering layer `l`.
pub fn update_statistics(
    stats: &mut [BnStats],
    cfg: &AdaptationConfig,
    windows: &[Tensor],
) -> Result<()> {
    cfg.validate()?;
    if windows.len() != stats.len() {
        return Err(Error::MissingStats(format!(
            "{} layer windows for {} layers",
            windows.len(),
            stats.len()
        )));
    }
    for w in windows {
        if w.rows() != cfg.n_t {
            return Err(Error::Batch(format!(
                "window holds {} frames, expected {}",
                w.rows(),
                cfg.n_t
            )));
        }
    }
    let local: Vec<BnStats> = windows.iter().map(batch_stats).collect::<Result<_>>()?;
    for (global, partial) in stats.iter_mut().zip(&local) {
        ema_update(global, partial, cfg.n_t, cfg.alpha)?;
    }
    Ok(())
}

/// Classifies one frame with the current globals and buffers its activations;
/// completes a window when `n_t` frames have accumulated.
pub fn process_frame(
    params: &Params,
    state: &mut AdaptationState,
    cfg: &AdaptationConfig,
    frame: &[f64],
) -> Result<usize> {
    if frame.len() != params.spec.input_dim {
        return Err(Error::dim(
            "process_frame",
            params.spec.input_dim,
            frame.len(),
        ));
    }
    let x = Tensor::new(vec![1, frame.len()], frame.to_vec())?;
    let pass = forward(params, &x, Regime::External(&state.stats))?;
    let prediction = argmax_rows(&pass.logits)[0];
    for (buf, acts) in state.window.iter_mut().zip(&pass.pre_bn) {
        buf.extend_from_slice(acts.data());
    }
    state.frames_in_window += 1;
    if state.frames_in_window == cfg.n_t {
        let windows: Vec<Tensor> = state
            .window
            .iter_mut()
            .map(|buf| {
                let k = buf.len() / cfg.n_t;
                Tensor::new(vec![cfg.n_t, k], std::mem::take(buf))
            })
            .collect::<Result<_>>()?;
        update_statistics(&mut state.stats, cfg, &windows)?;
        state.frames_in_window = 0;
        state.updates_done += 1;
    }
    Ok(prediction)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_index: usize,
    /// Number of updates applied before this frame was classified.
    pub update_index: usize,
    pub predicted: usize,
    pub correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    /// 1-based update counter.
    pub update_index: usize,
    /// Frames processed when the update fired.
    pub frames_processed: usize,
    pub mu_norms: Vec<f64>,
    pub sigma2_norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub fraction: f64,
    /// `⌊fraction · T⌋`.
    pub frames: usize,
    pub stats: Vec<BnStats>,
    /// Whole-set accuracy under `stats`; absent when the stream is unlabeled.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamTrace {
    pub frames: Vec<FrameRecord>,
    pub updates: Vec<UpdateRecord>,
    /// Statistics held after each update, parallel to `updates`.
    pub snapshots: Vec<Vec<BnStats>>,
    pub checkpoints: Vec<Checkpoint>,
    pub final_state: AdaptationState,
}

impl StreamTrace {
    pub fn checkpoint(&self, fraction: f64) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.fraction == fraction)
    }

    /// Accuracy of the per-frame online predictions, if labels were given.
    pub fn stream_accuracy(&self) -> Option<f64> {
        let flags: Option<Vec<bool>> = self.frames.iter().map(|f| f.correct).collect();
        flags.map(|f| f.iter().filter(|&&c| c).count() as f64 / f.len() as f64)
    }
}

/// One pass over `stream` (rows are frames in arrival order).
///
/// Labels, when present, only score predictions and checkpoints; adaptation
/// never reads them. Checkpoint accuracies evaluate the whole stream set with
/// the statistics held after `⌊p·T⌋` frames.
pub fn run_stream(
    params: &Params,
    source_globals: &[BnStats],
    cfg: &AdaptationConfig,
    stream: &Tensor,
    labels: Option<&[usize]>,
) -> Result<StreamTrace> {
    cfg.validate()?;
    let (t, _) = stream.expect_matrix("run_stream")?;
    if t == 0 {
        return Err(Error::Empty("stream"));
    }
    if let Some(l) = labels {
        if l.len() != t {
            return Err(Error::dim("run_stream labels", t, l.len()));
        }
    }
    let mut state = AdaptationState::new(source_globals.to_vec());
    let checkpoint_frames: Vec<usize> = CHECKPOINT_FRACTIONS
        .iter()
        .map(|p| (p * t as f64).floor() as usize)
        .collect();
    let mut checkpoint_stats: Vec<Option<Vec<BnStats>>> = checkpoint_frames
        .iter()
        .map(|&f| (f == 0).then(|| state.stats.clone()))
        .collect();
    let mut frames = Vec::with_capacity(t);
    let mut updates = Vec::new();
    let mut snapshots = Vec::new();
    for i in 0..t {
        let update_index = state.updates_done;
        let predicted = process_frame(params, &mut state, cfg, stream.row(i))?;
        frames.push(FrameRecord {
            frame_index: i,
            update_index,
            predicted,
            correct: labels.map(|l| l[i] == predicted),
        });
        if state.updates_done > update_index {
            let (mu_norms, sigma2_norms) = state.stats.iter().map(BnStats::norms).unzip();
            updates.push(UpdateRecord {
                update_index: state.updates_done,
                frames_processed: i + 1,
                mu_norms,
                sigma2_norms,
            });
            snapshots.push(state.stats.clone());
        }
        for (slot, &f) in checkpoint_stats.iter_mut().zip(&checkpoint_frames) {
            if f == i + 1 {
                *slot = Some(state.stats.clone());
            }
        }
    }
    let eval_set = labels
        .map(|l| Dataset::new(stream.clone(), l.to_vec()))
        .transpose()?;
    let checkpoints = CHECKPOINT_FRACTIONS
        .iter()
        .zip(checkpoint_frames)
        .zip(checkpoint_stats)
        .map(|((&fraction, frames), stats)| {
            let stats = stats.expect("checkpoint within stream");
            let accuracy = eval_set
                .as_ref()
                .map(|d| evaluate(params, d, Regime::External(&stats)))
                .transpose()?;
            Ok(Checkpoint {
                fraction,
                frames,
                stats,
                accuracy,
            })
        })
        .collect::<Result<_>>()?;
    Ok(StreamTrace {
        frames,
        updates,
        snapshots,
        checkpoints,
        final_state: state,
    })
}

/// Whole-set accuracy after each update of a trace.
pub fn update_trajectory(
    params: &Params,
    trace: &StreamTrace,
    eval_set: &Dataset,
) -> Result<Vec<f64>> {
    trace
        .snapshots
        .iter()
        .map(|stats| evaluate(params, eval_set, Regime::External(stats)))
        .collect()
}

/// Frame-level predictions with frozen source statistics, for comparison.
pub fn frozen_predictions(params: &Params, stream: &Tensor) -> Result<Vec<usize>> {
    Ok(argmax_rows(&forward(params, stream, Regime::Eval)?.logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkSpec;
    use crate::rng::{gaussian_sample, RngStream};

    fn net(seed: u64) -> Params {
        let spec = NetworkSpec {
            input_dim: 4,
            hidden_dims: vec![6, 5],
            num_classes: 3,
        };
        let mut p = Params::init(&spec, &mut RngStream::new(seed, 0)).unwrap();
        let mut rng = RngStream::new(seed, 1);
        for bn in &mut p.bn {
            for j in 0..bn.channels() {
                bn.running.mu[j] = rng.gaussian();
                bn.running.sigma2[j] = 0.5 + rng.uniform();
            }
        }
        p
    }

    #[test]
    fn config_validation() {
        assert!(AdaptationConfig { n_t: 1, alpha: 0.1 }.validate().is_err());
        assert!(AdaptationConfig { n_t: 2, alpha: 1.1 }.validate().is_err());
        assert!(AdaptationConfig {
            n_t: 2,
            alpha: -0.1
        }
        .validate()
        .is_err());
        AdaptationConfig::default().validate().unwrap();
    }

    #[test]
    fn update_statistics_direct_cases() {
        let cfg = AdaptationConfig { n_t: 2, alpha: 1.0 };
        let mut stats = vec![BnStats {
            mu: vec![5.0],
            sigma2: vec![5.0],
        }];
        let w = Tensor::new(vec![2, 1], vec![0.0, 2.0]).unwrap();
        update_statistics(&mut stats, &cfg, &[w]).unwrap();
        assert_eq!(stats[0].mu, vec![1.0]);
        assert_eq!(stats[0].sigma2, vec![2.0]);

        let cfg = AdaptationConfig { n_t: 2, alpha: 0.1 };
        let mut stats = vec![BnStats {
            mu: vec![0.0],
            sigma2: vec![1.0],
        }];
        let w = Tensor::new(vec![2, 1], vec![10.0, 10.0]).unwrap();
        update_statistics(&mut stats, &cfg, &[w]).unwrap();
        assert!((stats[0].mu[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn update_statistics_rejects_incomplete_window() {
        let cfg = AdaptationConfig { n_t: 3, alpha: 0.5 };
        let mut stats = vec![BnStats::standard(1)];
        let w = Tensor::new(vec![2, 1], vec![0.0, 2.0]).unwrap();
        assert!(update_statistics(&mut stats, &cfg, &[w]).is_err());
        assert!(update_statistics(&mut stats, &cfg, &[]).is_err());
    }

    #[test]
    fn counters_follow_window() {
        let p = net(1);
        let cfg = AdaptationConfig { n_t: 2, alpha: 0.3 };
        let mut state = AdaptationState::new(p.bn_globals());
        let frames = gaussian_sample(&mut RngStream::new(2, 0), &[3, 4]);
        process_frame(&p, &mut state, &cfg, frames.row(0)).unwrap();
        assert_eq!((state.frames_in_window(), state.updates_done()), (1, 0));
        assert_eq!(state.stats, p.bn_globals());
        process_frame(&p, &mut state, &cfg, frames.row(1)).unwrap();
        assert_eq!((state.frames_in_window(), state.updates_done()), (0, 1));
        assert_ne!(state.stats, p.bn_globals());
        assert!(process_frame(&p, &mut state, &cfg, &[0.0; 3]).is_err());
    }

    #[test]
    fn zero_alpha_matches_frozen_predictions() {
        let p = net(3);
        let stream = gaussian_sample(&mut RngStream::new(4, 0), &[57, 4]);
        let cfg = AdaptationConfig { n_t: 5, alpha: 0.0 };
        let trace = run_stream(&p, &p.bn_globals(), &cfg, &stream, None).unwrap();
        let online: Vec<usize> = trace.frames.iter().map(|f| f.predicted).collect();
        assert_eq!(online, frozen_predictions(&p, &stream).unwrap());
        assert_eq!(trace.updates.len(), 11);
        assert_eq!(trace.final_state.frames_in_window(), 2);
    }

    #[test]
    fn checkpoint_frames_and_update_count() {
        let p = net(5);
        let stream = gaussian_sample(&mut RngStream::new(6, 0), &[103, 4]);
        let labels: Vec<usize> = (0..103).map(|i| i % 3).collect();
        let trace = run_stream(
            &p,
            &p.bn_globals(),
            &AdaptationConfig::default(),
            &stream,
            Some(&labels),
        )
        .unwrap();
        assert_eq!(trace.updates.len(), 10);
        let frames: Vec<usize> = trace.checkpoints.iter().map(|c| c.frames).collect();
        assert_eq!(frames, vec![25, 51, 92]);
        // After 25 frames two updates have fired; the checkpoint holds that state.
        assert_eq!(trace.checkpoints[0].stats, trace.snapshots[1]);
        assert_eq!(trace.checkpoints[2].stats, trace.snapshots[8]);
        assert!(trace.checkpoints.iter().all(|c| c.accuracy.is_some()));
        assert!(trace.stream_accuracy().is_some());
    }

    #[test]
    fn empty_or_mislabeled_stream_rejected() {
        let p = net(7);
        let stream = gaussian_sample(&mut RngStream::new(8, 0), &[10, 4]);
        let cfg = AdaptationConfig::default();
        assert!(run_stream(&p, &p.bn_globals(), &cfg, &stream, Some(&[0; 3])).is_err());
        let wide = gaussian_sample(&mut RngStream::new(8, 0), &[10, 5]);
        assert!(run_stream(&p, &p.bn_globals(), &cfg, &wide, None).is_err());
    }

    #[test]
    fn labels_only_affect_correctness() {
        let p = net(9);
        let stream = gaussian_sample(&mut RngStream::new(10, 0), &[64, 4]);
        let labels: Vec<usize> = (0..64).map(|i| (i * 7) % 3).collect();
        let cfg = AdaptationConfig { n_t: 4, alpha: 0.2 };
        let with = run_stream(&p, &p.bn_globals(), &cfg, &stream, Some(&labels)).unwrap();
        let without = run_stream(&p, &p.bn_globals(), &cfg, &stream, None).unwrap();
        assert_eq!(with.snapshots, without.snapshots);
        assert_eq!(with.updates, without.updates);
        assert_eq!(with.final_state, without.final_state);
        for (a, b) in with.frames.iter().zip(&without.frames) {
            assert_eq!(
                (a.frame_index, a.update_index, a.predicted),
                (b.frame_index, b.update_index, b.predicted)
            );
            assert!(a.correct.is_some() && b.correct.is_none());
        }
        for (a, b) in with.checkpoints.iter().zip(&without.checkpoints) {
            assert_eq!(a.stats, b.stats);
            assert!(b.accuracy.is_none());
        }
    }

    #[test]
    fn replaying_a_prefix_reproduces_state() {
        let p = net(11);
        let stream = gaussian_sample(&mut RngStream::new(12, 0), &[40, 4]);
        let cfg = AdaptationConfig { n_t: 3, alpha: 0.4 };
        let run = |k: usize| {
            let mut s = AdaptationState::new(p.bn_globals());
            for i in 0..k {
                process_frame(&p, &mut s, &cfg, stream.row(i)).unwrap();
            }
            s
        };
        for k in [0, 1, 7, 9, 25] {
            assert_eq!(run(k), run(k));
        }
        let full = run_stream(&p, &p.bn_globals(), &cfg, &stream, None).unwrap();
        assert_eq!(full.final_state, run(40));
    }
}
