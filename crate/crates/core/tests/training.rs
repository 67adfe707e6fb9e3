use mmct_core::synthdata::{generate, GenConfig};
use mmct_core::trainer::{train_loop, ModelConfig, TrainConfig, TrainState};
use mmct_core::Error;

#[test]
fn default_run_reduces_total_loss() {
    let data = generate(&GenConfig::default()).unwrap();
    let mut state = TrainState::new(&ModelConfig::default(), 0).unwrap();
    let cfg = TrainConfig::default();
    let history = train_loop(&mut state, &data.train, &cfg, |_, m| {
        assert!(m.terms.is_finite(), "{m:?}");
        Ok::<(), Error>(())
    })
    .unwrap();
    assert_eq!(history.len(), 50);
    let (first, last) = (history[0].terms.total, history[49].terms.total);
    assert!(last < first, "{first} -> {last}");
}
