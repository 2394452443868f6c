use bss_core::audio_io::TimeSignal;
use bss_core::chain::{separate, Algorithm, SeparationConfig};
use bss_core::init::ls_rows;
use bss_core::linalg::C64;
use bss_core::simulate::{mix_scene, SceneParams};
use bss_core::stft::{istft, stft, StftConfig};
use ndarray::Array2;

fn scene(seed: u64) -> TimeSignal {
    let params = SceneParams {
        microphones: 4,
        duration_s: 3.0,
        ..SceneParams::default()
    };
    mix_scene(&params, seed).unwrap().mixture
}

#[test]
fn time_domain_handoff_adds_only_reconstruction_error() {
    // A frequency-flat real combination is a consistent spectrogram, so going
    // through istft/stft must leave the least-squares solution unchanged.
    let x = scene(11);
    let gains = [[0.7, -0.2, 0.4, 1.1], [-0.3, 0.9, 0.05, 0.6]];
    let n = x.num_samples();
    let est = Array2::from_shape_fn((n, 2), |(t, k)| (0..4).map(|m| gains[k][m] * x.samples()[(t, m)]).sum());
    let est = TimeSignal::new(est, x.sample_rate()).unwrap();
    let cfg = StftConfig::new(512, 128).unwrap();
    let spec = stft(&x, &cfg).unwrap();
    let through_time = stft(&istft(&stft(&est, &cfg).unwrap(), n).unwrap(), &cfg).unwrap();
    let (rows, fallbacks) = ls_rows(&spec, &through_time).unwrap();
    assert_eq!(fallbacks, 0);
    for r in &rows {
        for k in 0..2 {
            let scale: f64 = gains[k].iter().map(|g| g * g).sum::<f64>().sqrt();
            for m in 0..4 {
                assert!((r[(k, m)] - C64::new(gains[k][m], 0.0)).norm() <= 1e-6 * scale);
            }
        }
    }
}

#[test]
fn chain_outputs_match_input_shape_and_report_stages() {
    let x = scene(12);
    let cfg = SeparationConfig {
        algorithm: Algorithm::Chain,
        smm_stft_size: 512,
        iva_stft_size: 1024,
        smm_iterations: 8,
        iva_iterations: Some(10),
        ..SeparationConfig::default()
    };
    let out = separate(&x, &cfg).unwrap();
    assert_eq!(out.estimates.num_channels(), 2);
    assert_eq!(out.estimates.num_samples(), x.num_samples());
    let smm = out.report.smm.as_ref().unwrap();
    assert_eq!(smm.classes, 3);
    assert!(!smm.target_classes.contains(&smm.noise_class));
    let iva = out.report.iva.as_ref().unwrap();
    assert_eq!(iva.init, "smm");
    assert_eq!(iva.iva.iterations, 10);
    assert_eq!(out.intermediates.demixing.as_ref().unwrap().dim(), (513, 4, 4));
    assert_eq!(out.intermediates.beamformer.as_ref().unwrap().dim(), (257, 2, 4));
}
