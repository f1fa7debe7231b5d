use fan_core::{ActionGrid, PolicyModel};

// Recorded from this implementation at seed 7 and frozen.
const GOLDEN: [[f64; 3]; 2] = [
    [0.3414680050335426, 0.3909253256985254, 0.26760666926793203],
    [0.3555560579104761, 0.3423186531939349, 0.302125288895589],
];

#[test]
fn seeded_tiny_model_matches_recorded_probabilities() {
    let g = ActionGrid::uniform(2, -1.0, 1.0, 3).unwrap();
    let m = PolicyModel::new(3, 2, 2, vec![5], &g, 7).unwrap();
    let d = m.forward(&[0.1, -0.2, 0.3], 1).unwrap();
    for (k, row) in GOLDEN.iter().enumerate() {
        for (p, want) in d.probs(k).iter().zip(row) {
            assert!((p - want).abs() <= 1e-15, "dim {k}: {p} vs {want}");
        }
    }
}
