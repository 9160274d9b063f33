use dropnoise_core::nn::{dropout_forward, DropoutSpec, MaskRng, Phase, Probability};
use dropnoise_core::rng::StreamId;
use dropnoise_tensor::Tensor;

const ELEMENTS: usize = 1_000_000;
const GRID: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

fn p(v: f64) -> Probability {
    Probability::new(v).unwrap()
}

fn ones() -> Tensor<f64> {
    Tensor::ones(vec![ELEMENTS]).unwrap()
}

fn moments(t: &Tensor<f64>) -> (f64, f64) {
    let n = t.len() as f64;
    let m1 = t.data().iter().sum::<f64>() / n;
    let m2 = t.data().iter().map(|v| v * v).sum::<f64>() / n;
    (m1, m2)
}

#[test]
fn generation_noise_without_noise_is_the_identity() {
    let x = Tensor::from_fn(vec![4, 8], |i| i as f64 - 7.5).unwrap();
    let spec = DropoutSpec::inverted(p(0.4)).with_generation(Probability::ZERO, Probability::ZERO);
    let mut rng = MaskRng::shared(1, StreamId::GENERATION);
    let (y, mask) = dropout_forward(&x, &spec, Phase::GenerationNoise, &mut rng).unwrap();
    assert_eq!(y, x);
    assert!(mask.is_none_or(|m| m.keep.iter().all(|&k| k == 1)));
    assert_eq!(rng.position(), Some(0));
}

#[test]
fn mask_zero_fraction_matches_probability() {
    for (i, &pv) in GRID.iter().enumerate() {
        let mut rng = MaskRng::shared(10 + i as u64, StreamId::TRAIN_MASKS);
        let (_, mask) = dropout_forward(&ones(), &DropoutSpec::inverted(p(pv)), Phase::Train, &mut rng).unwrap();
        let zf = mask.unwrap().zero_fraction();
        assert!((zf - pv).abs() <= 0.005, "p = {pv}: zero fraction {zf}");
    }
}

#[test]
fn inverted_training_preserves_the_mean() {
    for (i, &pv) in GRID.iter().enumerate() {
        let mut rng = MaskRng::shared(20 + i as u64, StreamId::TRAIN_MASKS);
        let (y, _) = dropout_forward(&ones(), &DropoutSpec::inverted(p(pv)), Phase::Train, &mut rng).unwrap();
        let (m1, _) = moments(&y);
        assert!((m1 - 1.0).abs() <= 0.01, "p = {pv}: mean {m1}");
    }
}

#[test]
fn half_kept_signal_without_scaling() {
    let spec = DropoutSpec::inverted(p(0.5)).with_generation(p(0.5), Probability::ZERO);
    let mut rng = MaskRng::shared(3, StreamId::GENERATION);
    let (y, mask) = dropout_forward(&ones(), &spec, Phase::GenerationNoise, &mut rng).unwrap();
    let (m1, _) = moments(&y);
    assert!((0.495..=0.505).contains(&m1), "mean {m1}");
    assert!((mask.unwrap().zero_fraction() - 0.5).abs() <= 0.005);
}

#[test]
fn matched_generation_noise_reproduces_inverted_training_moments() {
    for (i, &pv) in GRID.iter().enumerate() {
        let spec = DropoutSpec::inverted(p(pv)).with_generation(p(pv), p(pv));
        let mut train_rng = MaskRng::shared(30 + i as u64, StreamId::TRAIN_MASKS);
        let mut gen_rng = MaskRng::shared(40 + i as u64, StreamId::GENERATION);
        let (train, _) = dropout_forward(&ones(), &spec, Phase::Train, &mut train_rng).unwrap();
        let (noise, _) = dropout_forward(&ones(), &spec, Phase::GenerationNoise, &mut gen_rng).unwrap();
        let (a1, a2) = moments(&train);
        let (b1, b2) = moments(&noise);
        assert!((a1 - b1).abs() <= 0.01 * a1, "p = {pv}: first moments {a1} vs {b1}");
        assert!((a2 - b2).abs() <= 0.01 * a2, "p = {pv}: second moments {a2} vs {b2}");
        // Closed form: E[X²] = 1 / (1 − p).
        assert!((a2 * (1.0 - pv) - 1.0).abs() <= 0.01);
    }
}

#[test]
fn scale_probability_never_moves_the_zeros() {
    let x = Tensor::from_fn(vec![10_000], |i| 1.0 + (i % 13) as f64).unwrap();
    let mut reference: Option<Vec<u8>> = None;
    for ps in [0.0, 0.2, 0.5, 0.9] {
        let spec = DropoutSpec::inverted(p(0.3)).with_generation(p(0.3), p(ps));
        let mut rng = MaskRng::shared(5, StreamId::GENERATION);
        let (y, mask) = dropout_forward(&x, &spec, Phase::GenerationNoise, &mut rng).unwrap();
        let keep = mask.unwrap().keep;
        for ((&yi, &xi), &k) in y.data().iter().zip(x.data()).zip(&keep) {
            assert_eq!(yi, if k == 1 { xi * (1.0 / (1.0 - ps)) } else { 0.0 });
        }
        match &reference {
            Some(r) => assert_eq!(r, &keep),
            None => reference = Some(keep),
        }
    }
}

#[test]
fn plain_generation_consumes_no_randomness() {
    let x = Tensor::from_fn(vec![3, 5], |i| i as f64).unwrap();
    for pv in GRID {
        let mut rng = MaskRng::shared(9, StreamId::GENERATION);
        let (y, mask) = dropout_forward(&x, &DropoutSpec::inverted(p(pv)), Phase::Generation, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(mask.is_none());
        assert_eq!(rng.position(), Some(0));
    }
}

#[test]
fn standard_training_rescaled_equals_inverted_training() {
    let x = Tensor::from_fn(vec![50_000], |i| (i as f64 * 0.37).sin()).unwrap();
    for pv in GRID {
        let mut a = MaskRng::shared(11, StreamId::TRAIN_MASKS);
        let mut b = MaskRng::shared(11, StreamId::TRAIN_MASKS);
        let (std_out, m1) = dropout_forward(&x, &DropoutSpec::standard(p(pv)), Phase::Train, &mut a).unwrap();
        let (inv_out, m2) = dropout_forward(&x, &DropoutSpec::inverted(p(pv)), Phase::Train, &mut b).unwrap();
        assert_eq!(m1, m2);
        for (s, i) in std_out.data().iter().zip(inv_out.data()) {
            assert_eq!(s * (1.0 / (1.0 - pv)), *i);
        }
    }
}
