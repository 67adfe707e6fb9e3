use mmct_core::encoders::{init_encoder, EncoderConfig, MomentumPair};
use mmct_core::rng::SeededRng;
use proptest::prelude::*;

fn cfg() -> EncoderConfig {
    EncoderConfig::new(vec![6, 10, 8], 3, 5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn ema_distance_decays_as_m_to_the_n(seed in any::<u64>(), n in 1usize..=1000) {
        let mut rng = SeededRng::new(seed);
        let query = init_encoder(&cfg(), &mut rng).unwrap();
        let mut pair = MomentumPair::new(query, 0.999).unwrap();
        pair.key = init_encoder(&cfg(), &mut rng).unwrap();
        let d0 = pair.key.distance(&pair.query);
        for _ in 0..n {
            pair.momentum_update();
        }
        let expected = 0.999f64.powi(n as i32) * d0;
        prop_assert!((pair.key.distance(&pair.query) - expected).abs() <= 1e-10);
    }

    #[test]
    fn heads_depend_on_disjoint_parameters(seed in any::<u64>(), delta in -1.0f64..1.0) {
        prop_assume!(delta.abs() > 1e-3);
        let mut rng = SeededRng::new(seed);
        let params = init_encoder(&cfg(), &mut rng).unwrap();
        let x: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let base = params.forward(&x).unwrap();

        let mut p = params.clone();
        p.inter_head.as_mut().unwrap().layers[0].bias[0] += delta;
        p.inter_head.as_mut().unwrap().layers[1].weight.as_mut_slice()[0] += delta;
        prop_assert_eq!(&p.forward(&x).unwrap().intra, &base.intra);

        let mut p = params.clone();
        p.intra_head.layers[0].bias[0] += delta;
        p.intra_head.layers[1].weight.as_mut_slice()[0] += delta;
        prop_assert_eq!(&p.forward(&x).unwrap().inter, &base.inter);
    }
}
