use super::*;
use crate::correlation::ModeSum;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Wide teeth and fast decay so 100 ps bins resolve the shape.
fn wide_model() -> PairCorrelationModel {
    PairCorrelationModel::symmetric(20e6, 120.8e6, 1e-9, 30)
}

/// Simpson integral of the model density over `[a, b)`.
fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Chi-square p-value of `draws` against bin masses of `density` on
/// `[lo, hi)`, merging adjacent bins until each expects at least 5 counts.
fn chi_square_p<F: Fn(f64) -> f64>(draws: &[f64], density: F, lo: f64, hi: f64, bins: usize) -> f64 {
    let w = (hi - lo) / bins as f64;
    let mass: Vec<f64> = (0..bins).map(|k| simpson(&density, lo + k as f64 * w, lo + (k + 1) as f64 * w, 8)).collect();
    let total: f64 = mass.iter().sum();
    let mut observed = vec![0u64; bins];
    for &d in draws {
        let k = ((d - lo) / w).floor();
        assert!(k >= 0.0 && (k as usize) < bins, "draw {d:e} outside window");
        observed[k as usize] += 1;
    }
    let n = draws.len() as f64;
    let (mut chi2, mut dof) = (0.0, 0usize);
    let (mut e_acc, mut o_acc) = (0.0, 0.0);
    for k in 0..bins {
        e_acc += n * mass[k] / total;
        o_acc += observed[k] as f64;
        if e_acc >= 5.0 || k == bins - 1 {
            chi2 += (o_acc - e_acc).powi(2) / e_acc.max(1e-300);
            dof += 1;
            e_acc = 0.0;
            o_acc = 0.0;
        }
    }
    ChiSquared::new((dof - 1) as f64).unwrap().sf(chi2)
}

fn draws(sampler: &DelaySampler, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sampler.sample(&mut rng)).collect()
}

#[test]
fn sampled_delays_match_model_chi_square() {
    let model = wide_model();
    let sum = ModeSum::new(&model).unwrap();
    let sampler = DelaySampler::new(&model, None).unwrap();
    let w = sampler.window();
    let h = 0.5 * model.tau0;
    let d = draws(&sampler, 1_000_000, 11);
    let p = chi_square_p(&d, |t| sum.g2(t).unwrap(), h - w, h + w, 5000);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn sampled_delays_with_detuned_plate_match_model() {
    let model = wide_model();
    let hwp = HwpConfig::new(2.0).unwrap();
    let sum = ModeSum::new(&model).unwrap();
    let sampler = DelaySampler::new(&model, Some(&hwp)).unwrap();
    let w = sampler.window();
    let h = 0.5 * model.tau0;
    let d = draws(&sampler, 1_000_000, 12);
    let p = chi_square_p(&d, |t| sum.g2_with_hwp(&hwp, t).unwrap(), h - w, h + w, 5000);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn single_mode_gives_two_sided_exponential() {
    let gamma = 5e6;
    let model = PairCorrelationModel::symmetric(gamma, 120.8e6, 20e-12, 0);
    let sampler = DelaySampler::new(&model, None).unwrap();
    let d = draws(&sampler, 200_000, 3);
    let h = 0.5 * model.tau0;
    let mean = d.iter().map(|t| (t - h).abs()).sum::<f64>() / d.len() as f64;
    let expected = 1.0 / (std::f64::consts::TAU * gamma);
    assert!((mean / expected - 1.0).abs() < 0.02, "mean {mean:e} vs {expected:e}");
    let positive = d.iter().filter(|&&t| t >= h).count() as f64 / d.len() as f64;
    assert!((positive - 0.5).abs() < 0.01);
}

#[test]
fn aligned_plate_never_draws_odd_peaks() {
    let model = PairCorrelationModel::symmetric(667e3, 120.8e6, 7.5e-12, 1000);
    let hwp = HwpConfig::default();
    let sampler = DelaySampler::new(&model, Some(&hwp)).unwrap();
    let t_phys = 0.5 / model.fsr_s;
    let d = draws(&sampler, 200_000, 4);
    let odd = d
        .iter()
        .filter(|&&t| {
            let x = (t - 0.5 * model.tau0) / t_phys;
            let n = x.round();
            (n as i64) % 2 != 0 && (x - n).abs() < 0.5
        })
        .count();
    assert_eq!(odd, 0);
}

#[test]
fn delays_cluster_on_teeth() {
    let model = PairCorrelationModel::symmetric(667e3, 120.8e6, 7.5e-12, 2000);
    let sampler = DelaySampler::new(&model, None).unwrap();
    let t_rt = model.round_trip_time();
    let d = draws(&sampler, 100_000, 5);
    let near = d
        .iter()
        .filter(|&&t| {
            let x = (t - 0.5 * model.tau0) / t_rt;
            (x - x.round()).abs() * t_rt < 50e-12
        })
        .count();
    assert!(near as f64 > 0.99 * d.len() as f64, "{near}");
}

#[test]
fn sample_pair_delay_stays_in_window() {
    let model = wide_model();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = default_window(&model);
    for _ in 0..20 {
        let t = sample_pair_delay(&model, &HwpConfig::default(), &mut rng).unwrap();
        assert!((t - 0.5 * model.tau0).abs() <= w);
    }
}

fn reference_model() -> PairCorrelationModel {
    PairCorrelationModel::symmetric(666e3, 120.8e6, 7.5e-12, 1000)
}

#[test]
fn reference_rate_gives_expected_pair_count() {
    let run = SimRun::new(473.0, 660.0, 2024);
    let s = simulate_stream(&run, &reference_model(), None, &DetectorConfig::ideal()).unwrap();
    let n = s.count(Channel::Signal) as f64;
    let expected = 473.0 * 660.0;
    assert!((n - expected).abs() < 3.0 * expected.sqrt(), "{n}");
    // idlers lost only at the end of the run
    assert!((s.count(Channel::Idler) as f64 - n).abs() < 10.0);
}

#[test]
fn zero_efficiency_channel_has_only_darks() {
    let det = DetectorConfig { efficiency_s: 0.0, dark_rate_s: 500.0, dark_rate_i: 0.0, ..DetectorConfig::default() };
    let run = SimRun::new(5000.0, 20.0, 9);
    let s = simulate_stream(&run, &reference_model(), None, &det).unwrap();
    let n = s.count(Channel::Signal) as f64;
    let expected = 500.0 * 20.0;
    assert!((n - expected).abs() < 5.0 * expected.sqrt(), "{n}");
    let ni = s.count(Channel::Idler) as f64;
    assert!((ni - 1e5).abs() < 5.0 * 1e5f64.sqrt());
}

#[test]
fn simulation_is_deterministic() {
    let run = SimRun::new(2000.0, 3.5, 77);
    let hwp = HwpConfig::new(1.0).unwrap();
    let a = simulate_stream(&run, &reference_model(), Some(&hwp), &DetectorConfig::default()).unwrap();
    let b = simulate_stream(&run, &reference_model(), Some(&hwp), &DetectorConfig::default()).unwrap();
    let (mut ba, mut bb) = (Vec::new(), Vec::new());
    write_ptag(&a, &mut ba).unwrap();
    write_ptag(&b, &mut bb).unwrap();
    assert_eq!(ba, bb);
    let c = simulate_stream(&SimRun { seed: 78, ..run }, &reference_model(), Some(&hwp), &DetectorConfig::default())
        .unwrap();
    assert_ne!(a.records, c.records);
}

#[cfg(feature = "parallel")]
#[test]
fn thread_count_does_not_change_output() {
    let run = SimRun::new(3000.0, 6.0, 5);
    let sampler = DelaySampler::new(&reference_model(), None).unwrap();
    let det = DetectorConfig::default();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let seq = one.install(|| simulate_stream_with(&run, &sampler, &det).unwrap());
    let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let par = many.install(|| simulate_stream_with(&run, &sampler, &det).unwrap());
    assert_eq!(seq, par);
}

#[test]
fn stream_is_sorted_and_in_range() {
    let run = SimRun::new(5000.0, 2.0, 1);
    let s = simulate_stream(&run, &reference_model(), None, &DetectorConfig::default()).unwrap();
    s.validate().unwrap();
    assert!(s.records.windows(2).all(|w| (w[0].ticks, w[0].channel) <= (w[1].ticks, w[1].channel)));
    let max = (run.duration / run.tick_duration).ceil() as u64;
    assert!(s.records.iter().all(|r| r.ticks <= max));
}

#[test]
fn pair_counts_stay_in_poisson_band() {
    let model = reference_model();
    let sampler = DelaySampler::new(&model, None).unwrap();
    let det = DetectorConfig { efficiency_i: 0.0, ..DetectorConfig::ideal() };
    let mean = 1000.0 * 5.0;
    for seed in 0..10 {
        let s = simulate_stream_with(&SimRun::new(1000.0, 5.0, seed), &sampler, &det).unwrap();
        let n = s.len() as f64;
        assert!((n - mean).abs() < 5.0 * mean.sqrt(), "seed {seed}: {n}");
    }
}

#[test]
fn oversized_runs_are_rejected() {
    let model = reference_model();
    let huge = SimRun::new(1e9, 1e3, 0);
    assert!(matches!(
        simulate_stream(&huge, &model, None, &DetectorConfig::ideal()),
        Err(Error::Capacity(_))
    ));
    let ticks = SimRun { tick_duration: 1e-30, ..SimRun::new(0.0, 1e3, 0) };
    assert!(matches!(
        simulate_stream(&ticks, &model, None, &DetectorConfig::ideal()),
        Err(Error::Capacity(_))
    ));
    assert!(simulate_stream(&SimRun::new(1.0, 0.0, 0), &model, None, &DetectorConfig::ideal()).is_err());
    let bad = DetectorConfig { efficiency_s: 1.5, ..DetectorConfig::default() };
    assert!(simulate_stream(&SimRun::new(1.0, 1.0, 0), &model, None, &bad).is_err());
}

#[test]
fn quantize_rounds_half_up() {
    assert_eq!(quantize(0.0, 1.0), Some(0));
    assert_eq!(quantize(0.49, 1.0), Some(0));
    assert_eq!(quantize(0.5, 1.0), Some(1));
    assert_eq!(quantize(2.5, 1.0), Some(3));
    assert_eq!(quantize(-1e-18, 1.0), None);
}

proptest! {
    #[test]
    fn quantization_error_is_at_most_half_tick(t in 0.0f64..1e3, tick in 1e-12f64..1e-9) {
        let q = quantize(t, tick).unwrap();
        prop_assert!((q as f64 * tick - t).abs() <= 0.5 * tick * (1.0 + 1e-9));
    }

    #[test]
    fn ptag_round_trips(recs in proptest::collection::vec((0u8..2, 0u64..u64::MAX / 2), 0..200)) {
        let mut sig: Vec<u64> = recs.iter().filter(|r| r.0 == 0).map(|r| r.1).collect();
        let mut idl: Vec<u64> = recs.iter().filter(|r| r.0 == 1).map(|r| r.1).collect();
        sig.sort_unstable();
        idl.sort_unstable();
        let s = TimeTagStream::from_channels(DEFAULT_TICK_DURATION, &sig, &idl).unwrap();
        let mut buf = Vec::new();
        write_ptag(&s, &mut buf).unwrap();
        prop_assert_eq!(buf.len(), PTAG_HEADER_LEN + PTAG_RECORD_LEN * s.len());
        let back = read_ptag(&buf[..]).unwrap();
        prop_assert_eq!(&back.records, &s.records);
        prop_assert!((back.tick_duration / s.tick_duration - 1.0).abs() < 1e-12);
        let mut csv = Vec::new();
        write_csv(&s, &mut csv).unwrap();
        let back = read_csv(&csv[..], s.tick_duration).unwrap();
        prop_assert_eq!(back, s);
    }
}

fn sample_stream() -> TimeTagStream {
    TimeTagStream::from_channels(DEFAULT_TICK_DURATION, &[1, 5, 9], &[2, 3]).unwrap()
}

#[test]
fn ptag_header_layout() {
    let mut buf = Vec::new();
    write_ptag(&sample_stream(), &mut buf).unwrap();
    assert_eq!(&buf[0..4], b"PTAG");
    assert_eq!(&buf[4..6], &[1, 0]);
    assert_eq!(&buf[6..8], &[0, 0]);
    assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 100_100);
    // first record: signal tick 1
    assert_eq!(buf[16], 0);
    assert_eq!(u64::from_le_bytes(buf[17..25].try_into().unwrap()), 1);
}

fn format_offset(r: Result<TimeTagStream>) -> u64 {
    match r {
        Err(Error::Format { offset, .. }) => offset,
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn ptag_errors_report_byte_offsets() {
    let mut good = Vec::new();
    write_ptag(&sample_stream(), &mut good).unwrap();

    assert_eq!(format_offset(read_ptag(&good[..10])), 10);
    let mut bad = good.clone();
    bad[0] = b'X';
    assert_eq!(format_offset(read_ptag(&bad[..])), 0);
    let mut bad = good.clone();
    bad[4] = 2;
    assert_eq!(format_offset(read_ptag(&bad[..])), 4);
    let mut bad = good.clone();
    bad[7] = 1;
    assert_eq!(format_offset(read_ptag(&bad[..])), 6);
    let mut bad = good.clone();
    bad[8..16].copy_from_slice(&0u64.to_le_bytes());
    assert_eq!(format_offset(read_ptag(&bad[..])), 8);
    assert_eq!(format_offset(read_ptag(&good[..good.len() - 3])), 16 + 4 * 9);
    let mut bad = good.clone();
    bad[16 + 2 * 9] = 7;
    assert_eq!(format_offset(read_ptag(&bad[..])), 34);
    // make the third signal tick smaller than the second
    let mut bad = good.clone();
    let last = 16 + 4 * 9;
    assert_eq!(bad[last], 0);
    bad[last + 1..last + 9].copy_from_slice(&0u64.to_le_bytes());
    assert_eq!(format_offset(read_ptag(&bad[..])), last as u64);
}

#[test]
fn empty_ptag_is_valid() {
    let mut buf = Vec::new();
    write_ptag(&TimeTagStream::empty(DEFAULT_TICK_DURATION), &mut buf).unwrap();
    assert_eq!(buf.len(), PTAG_HEADER_LEN);
    assert!(read_ptag(&buf[..]).unwrap().is_empty());
}

#[test]
fn csv_errors_report_line_offsets() {
    let text = "channel,ticks\n0,1\n1,x\n";
    assert_eq!(format_offset(read_csv(text.as_bytes(), 1.0)), 18);
    let text = "channel,ticks\n0,5\n3,6\n";
    assert_eq!(format_offset(read_csv(text.as_bytes(), 1.0)), 18);
    let text = "0,5\n0,4\n";
    assert_eq!(format_offset(read_csv(text.as_bytes(), 1.0)), 4);
    let s = read_csv("0,5\n\n1,2\n".as_bytes(), 1.0).unwrap();
    assert_eq!(s.len(), 2);
}

#[test]
fn stream_validation_flags_unsorted_index() {
    let recs = vec![
        TimeTagRecord { channel: Channel::Signal, ticks: 4 },
        TimeTagRecord { channel: Channel::Idler, ticks: 1 },
        TimeTagRecord { channel: Channel::Signal, ticks: 3 },
    ];
    match TimeTagStream::new(1.0, recs) {
        Err(Error::Unsorted { index, .. }) => assert_eq!(index, 2),
        other => panic!("{other:?}"),
    }
}
