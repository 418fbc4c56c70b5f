//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

use std::f64::consts::{E, PI};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use mca_eeg::cnn::{gradcheck, Network, NetworkSpec};
use mca_eeg::container::Target;
use mca_eeg::dsp::{design_bandpass, design_notch, fast_ica, filter_forward_backward};
use mca_eeg::experiment::{
    ablate, extract_features, features_from_pairs, run_features, ExperimentConfig, FeatureMode,
};
use mca_eeg::features::{differential_entropy, welch_psd, FeatureCube, FeatureKind, WelchConfig};
use mca_eeg::fusion::{fuse_cubes, mca};
use mca_eeg::synth::{complementary_cubes, synth_container, ComplementaryConfig, SynthConfig};
use mca_eeg::Tensor;

const FS: f64 = 128.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn de_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let expected = 0.5 * (2.0 * PI * E).ln();
    let mut total = 0.0;
    let mut worst_formula: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    for w in 0..10_000 {
        let x = gaussian(&mut rng, 256);
        let de = differential_entropy(&x).unwrap();
        total += de;
        worst_formula = worst_formula.max((de - 0.5 * (2.0 * PI * E * sample_variance(&x)).ln()).abs());
        let sigma = 0.25 + (w % 40) as f64 * 0.1;
        let scaled: Vec<f64> = x.iter().map(|v| v * sigma).collect();
        let shift = differential_entropy(&scaled).unwrap() - de;
        worst_shift = worst_shift.max((shift - 0.5 * (sigma * sigma).ln()).abs());
    }
    let mean = total / 10_000.0;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        (mean - 1.4189).abs() <= 0.02 && (mean - expected).abs() <= 0.02 && worst_formula < 1e-12 && worst_shift < 1e-12 && secs < 5.0,
        format!(
            "mean DE {mean:.5} nats (½ln2πe = {expected:.5}); per-window |DE - ½ln(2πe·s²)| ≤ {worst_formula:.1e}; \
             σ-scaling shift vs ½ln σ² ≤ {worst_shift:.1e}; {secs:.2} s"
        ),
    )
}

fn welch_parseval() -> Outcome {
    let start = Instant::now();
    let n = 60 * FS as usize;
    let sine: Vec<f64> = (0..n).map(|i| (2.0 * PI * 16.0 * i as f64 / FS).sin()).collect();
    let noise = gaussian(&mut ChaCha8Rng::seed_from_u64(2), n);
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, x) in [("sine", &sine), ("noise", &noise)] {
        let spectrum = welch_psd(x, FS, &WelchConfig::default()).unwrap();
        let var = sample_variance(x);
        let err = (spectrum.integrated_power() - var).abs() / var;
        pass &= err <= 0.05;
        parts.push(format!("{name} {:.2}%", 100.0 * err));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 1.0;
    outcome(pass, format!("relative error {}; {secs:.3} s", parts.join(", ")))
}

fn tone_gain_db(freq: f64, f: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    let n = 30 * FS as usize;
    let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * freq * i as f64 / FS).sin()).collect();
    let y = f(&x);
    let mid = n / 4..3 * n / 4;
    20.0 * (rms(&y[mid.clone()]) / rms(&x[mid])).log10()
}

fn filter_suite() -> Outcome {
    let notch = design_notch(50.0, 30.0, FS).unwrap();
    let band = design_bandpass(4.0, 45.0, 4, FS).unwrap();
    let notch_db = tone_gain_db(50.0, |x| filter_forward_backward(x, &notch).unwrap());
    let bp1 = tone_gain_db(1.0, |x| filter_forward_backward(x, &band).unwrap());
    let bp60 = tone_gain_db(60.0, |x| filter_forward_backward(x, &band).unwrap());
    let single = [notch.gain_db(50.0, FS), band.gain_db(1.0, FS), band.gain_db(60.0, FS)];

    let n = 2049;
    let c = n / 2;
    let mut impulse = vec![0.0; n];
    impulse[c] = 1.0;
    let h = filter_forward_backward(&filter_forward_backward(&impulse, &notch).unwrap(), &band).unwrap();
    let asym = (1..c).map(|k| (h[c + k] - h[c - k]).abs()).fold(0.0, f64::max);

    outcome(
        notch_db <= -30.0 && single[0] <= -30.0 && bp1 <= -12.0 && bp60 <= -12.0 && single[1] <= -12.0 && single[2] <= -12.0 && asym <= 1e-6,
        format!(
            "50 Hz notch {notch_db:.1} dB (single pass {:.1}); band-pass 1 Hz {bp1:.1} dB, 60 Hz {bp60:.1} dB \
             (single pass {:.1}, {:.1}); impulse asymmetry {asym:.1e}",
            single[0], single[1], single[2]
        ),
    )
}

fn fastica() -> Outcome {
    let n = 4000;
    let fs = 256.0;
    let sine: Vec<f64> = (0..n).map(|i| (2.0 * PI * 8.0 * i as f64 / fs).sin()).collect();
    let saw: Vec<f64> = (0..n).map(|i| 2.0 * ((3.0 * i as f64 / fs) % 1.0) - 1.0).collect();
    let mix = [[0.8, 0.6], [0.3, -1.1]];
    let data: Vec<f64> = mix
        .iter()
        .flat_map(|row| (0..n).map(|i| row[0] * sine[i] + row[1] * saw[i]).collect::<Vec<_>>())
        .collect();
    let x = Tensor::new(&[2, n], data).unwrap();
    let model = fast_ica(&x, 2, 11).unwrap();
    let sources = model.sources(&x).unwrap();
    let best = |truth: &[f64]| (0..2).map(|k| correlation(sources.row(k), truth).abs()).fold(0.0, f64::max);
    let (cs, cw) = (best(&sine), best(&saw));
    let repeat = fast_ica(&x, 2, 11).unwrap() == model;
    outcome(
        cs >= 0.95 && cw >= 0.95 && repeat,
        format!("|corr| sine {cs:.4}, sawtooth {cw:.4}; same seed gives identical model: {repeat}"),
    )
}

fn attention_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_row: f64 = 0.0;
    for _ in 0..1000 {
        let (r, c) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let scale = 10f64.powf(rng.gen_range(-2.0..3.0));
        let data = (0..r * c).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        let s = Tensor::new(&[r, c], data).unwrap().softmax_rows().unwrap();
        for i in 0..r {
            worst_row = worst_row.max((s.row(i).iter().sum::<f64>() - 1.0).abs());
        }
    }

    let random = |rng: &mut ChaCha8Rng| {
        Tensor::new(&[32, 60], (0..32 * 60).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap()
    };
    let commutes = (0..20).all(|_| {
        let (a, b) = (random(&mut rng), random(&mut rng));
        mca(&a, &b).unwrap() == mca(&b, &a).unwrap()
    });

    let dyadic = [1.0, -2.5, 0.125, 3.75, 1024.0];
    let exact = dyadic.iter().all(|&c| {
        let f = Tensor::filled(&[32, 60], c);
        mca(&f, &f).unwrap().data().iter().all(|&x| x == 2.0 * c)
    });
    let mut worst_const: f64 = 0.0;
    for _ in 0..200 {
        let c: f64 = rng.gen_range(-50.0..50.0);
        let f = Tensor::filled(&[32, 60], c);
        for &x in mca(&f, &f).unwrap().data() {
            worst_const = worst_const.max((x - 2.0 * c).abs() / (2.0 * c).abs());
        }
    }

    let cube = |rng: &mut ChaCha8Rng, kind| {
        FeatureCube::new(kind, Tensor::new(&[32, 5, 60], (0..32 * 5 * 60).map(|_| rng.gen_range(0.1..4.0)).collect()).unwrap()).unwrap()
    };
    let de = cube(&mut rng, FeatureKind::De);
    let psd = cube(&mut rng, FeatureKind::Psd);
    let fused = fuse_cubes(&de, &psd).unwrap();
    let mut local = true;
    for b in 0..5 {
        local &= fused.band(b) == mca(&de.band(b), &psd.band(b)).unwrap();
        let mut bumped = de.values.clone();
        for ch in 0..32 {
            for t in 0..60 {
                let v = bumped.get(&[ch, b, t]);
                bumped.set(&[ch, b, t], v + 0.7);
            }
        }
        let refused = fuse_cubes(&FeatureCube::new(FeatureKind::De, bumped).unwrap(), &psd).unwrap();
        for other in (0..5).filter(|&o| o != b) {
            local &= refused.band(other) == fused.band(other);
        }
        local &= refused.band(b) != fused.band(b);
    }

    outcome(
        worst_row <= 1e-9 && commutes && exact && worst_const <= 1e-14 && local,
        format!(
            "max |row sum - 1| {worst_row:.1e} over 1000 matrices; commutativity bit-exact: {commutes}; \
             constant input gives 2c exactly for dyadic c: {exact}, max rel error {worst_const:.1e} otherwise; \
             per-band locality bit-exact: {local}"
        ),
    )
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, check) in [
        ("conv3d", gradcheck::conv3d(1)),
        ("maxpool3d", gradcheck::maxpool3d(2)),
        ("relu", gradcheck::relu_layer(3)),
        ("linear", gradcheck::linear(4)),
        ("softmax-xent", gradcheck::cross_entropy(5)),
    ] {
        let check = check.unwrap();
        pass &= check.passes(1e-4);
        parts.push(format!("{name} {:.1e}", check.max_rel_error));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = Network::new(NetworkSpec::eeg(32, 5, 3), 7).unwrap();
    let xs: Vec<Tensor> = (0..2)
        .map(|_| Tensor::new(&[1, 32, 5, 3], gaussian(&mut rng, 480)).unwrap())
        .collect();
    let e2e = gradcheck::network(&net, &xs, &[0, 1], 24, 8).unwrap();
    pass &= e2e.passes(1e-4) && e2e.checked >= 8 * 12;
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 60.0;
    outcome(
        pass,
        format!(
            "max rel error {}; network on (1,32,5,3) inputs {:.1e} over {} entries ({} skipped at kinks); {secs:.1} s",
            parts.join(", "),
            e2e.max_rel_error,
            e2e.checked,
            e2e.skipped
        ),
    )
}

fn shape_chain() -> Outcome {
    let spec = NetworkSpec::eeg(32, 5, 3);
    let chain = spec.shape_chain().unwrap();
    let at = |name: &str| chain.iter().find(|s| s.layer == name).map(|s| s.shape.clone());
    let input = spec.input.clone();
    let got = (at("pool1"), at("pool2"), at("flatten1"), at("fc1"));
    let expected = (Some(vec![32, 16, 3, 2]), Some(vec![64, 8, 2, 2]), Some(vec![2048]), Some(vec![2]));
    let built = Network::new(spec, 0).is_ok();
    outcome(
        input == [1, 32, 5, 3] && got == expected && built,
        format!("{input:?} → {:?} → {:?} → {:?} → {:?}", got.0.unwrap_or_default(), got.1.unwrap_or_default(), got.2.unwrap_or_default(), got.3.unwrap_or_default()),
    )
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let container = synth_container(&SynthConfig::default()).unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.target = Target::Arousal;
    cfg.feature_mode = FeatureMode::Mca;
    cfg.train.epochs = 20;
    cfg.train.target_train_accuracy = Some(0.99);
    let features = extract_features(&container, &cfg).unwrap();
    let run = run_features(&features, &cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let r = &run.report;
    let acc = r.test_metrics.accuracy;
    outcome(
        r.segments.per_class.iter().all(|&n| n >= 640) && acc >= 0.95 && r.epochs_run <= 20 && secs < 300.0,
        format!(
            "arousal, MCA: test accuracy {:.2}% after {} epochs on {} segments/class; {secs:.0} s",
            100.0 * acc,
            r.epochs_run,
            r.segments.per_class[0]
        ),
    )
}

fn complementarity() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.target = Target::Valence;
    cfg.train.epochs = 5;
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in [0, 1, 2] {
        let pairs = complementary_cubes(&ComplementaryConfig { seed, ..ComplementaryConfig::default() }).unwrap();
        let report = ablate(&features_from_pairs(pairs), &cfg, &[FeatureMode::Sum, FeatureMode::Mca], &[seed]).unwrap();
        let (sum, mca) = (report.rows[0].accuracies[0], report.rows[1].accuracies[0]);
        pass &= mca >= sum;
        parts.push(format!("seed {seed}: MCA {:.2}% vs SUM {:.2}%", 100.0 * mca, 100.0 * sum));
    }
    outcome(pass, parts.join("; "))
}

fn determinism() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let container = synth_container(&SynthConfig { seed: 4, n_subjects: 1, trials_per_subject: 4, ..SynthConfig::default() }).unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.train.epochs = 2;
    cfg.train.seed = 13;
    let mut reports = Vec::new();
    let mut checkpoints = Vec::new();
    for i in 0..2 {
        let features = extract_features(&container, &cfg).unwrap();
        let run = run_features(&features, &cfg).unwrap();
        let path = dir.path().join(format!("model{i}.bin"));
        run.classifier.save(&path).unwrap();
        reports.push(serde_json::to_vec(&run.report).unwrap());
        checkpoints.push(std::fs::read(&path).unwrap());
    }
    let same_report = reports[0] == reports[1];
    let same_ckpt = checkpoints[0] == checkpoints[1];
    outcome(
        same_report && same_ckpt,
        format!(
            "report bytes identical: {same_report} ({} B); checkpoint bytes identical: {same_ckpt} ({} B)",
            reports[0].len(),
            checkpoints[0].len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("DE analytic oracle", de_oracle),
        ("Welch-Parseval", welch_parseval),
        ("filter suite", filter_suite),
        ("FastICA separation", fastica),
        ("attention/MCA properties", attention_properties),
        ("gradient checks", gradient_checks),
        ("shape chain", shape_chain),
        ("end-to-end synthetic", end_to_end),
        ("MCA vs SUM on planted complementarity", complementarity),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
