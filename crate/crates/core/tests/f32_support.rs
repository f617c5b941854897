//! The numeric kernels are generic over the scalar type; these tests pin
//! the f32 instantiation (the pipeline itself runs f64).

use avse_core::dsp::{istft, stft, StftConfig, Waveform};
use avse_core::grid::Grid;
use avse_core::mask::{compute_iam, ltass_threshold};
use avse_core::neural::{loss_iam, ModelConfig, ModelGraph, ModelKind};
use avse_core::dsp::MagSpectrogram;

#[test]
fn f32_stft_round_trip_within_single_precision() {
    let cfg = StftConfig::default();
    let n = 8000usize;
    let samples: Vec<f32> = (0..n)
        .map(|i| (2.0 * std::f32::consts::PI * 523.0 * i as f32 / 16000.0).sin() * 0.6)
        .collect();
    let w = Waveform::new(samples, 16000).unwrap();
    let back = istft(&stft(&w, &cfg).unwrap(), &cfg).unwrap();
    let edge = cfg.win_length / 2;
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for i in edge..n - edge {
        let d = (back.samples()[i] - w.samples()[i]) as f64;
        num += d * d;
        den += (w.samples()[i] as f64).powi(2);
    }
    assert!((num / den).sqrt() < 1e-3);
}

#[test]
fn f32_masks_and_network_forward() {
    let s = MagSpectrogram::with_flags(Grid::from_vec(1, 2, vec![2.0f32, 3.0]), true, false);
    let y = MagSpectrogram::with_flags(Grid::from_vec(1, 2, vec![4.0f32, 6.0]), true, false);
    let iam = compute_iam(&s, &y, 10.0f32).unwrap();
    assert_eq!(iam.grid().as_slice(), &[0.5f32, 0.5]);

    let stats = avse_core::dsp::compute_speaker_stats(std::slice::from_ref(&s)).unwrap();
    let thr = ltass_threshold(&stats, 0.6f32);
    assert_eq!(thr.tau.len(), 2);

    let cfg = ModelConfig {
        feat_dim: 4,
        spec_bins: 3,
        units: 2,
        vl2m_layers: 1,
        concat_layers: 1,
        refine_layers: 1,
        iam_clip: 10.0,
    };
    let graph: ModelGraph<f32> = ModelGraph::new(ModelKind::AvConcat, cfg, 1);
    let v = Grid::from_elem(2, 4, 0.3f32);
    let yy = Grid::from_elem(2, 3, 0.1f32);
    let (p, _) = graph.forward(&v, &yy, None).unwrap();
    assert!(p.as_slice().iter().all(|&x| x > 0.0 && x < 10.0));
    let target = Grid::from_elem(2, 3, 0.2f32);
    let loss = loss_iam(&p, &yy, &target).unwrap();
    assert!(loss.is_finite());
}
