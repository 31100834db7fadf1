use nalgebra::DMatrix;
use proptest::prelude::*;
use ssmrom::embed::{count_dominant_frequencies, delay_embed, EmbeddingConfig};
use ssmrom::system::Trajectory;

fn signal(values: &[f64], dt: f64) -> Trajectory<f64> {
    Trajectory::uniform(
        0.0,
        dt,
        DMatrix::from_column_slice(values.len(), 1, values),
        vec!["s".into()],
    )
    .unwrap()
}

fn cfg(p: usize, step: usize, trim: f64) -> EmbeddingConfig {
    let mut c = EmbeddingConfig::delays(p, step, vec![]);
    c.trim_time = trim;
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn embedding_is_linear(
        s1 in prop::collection::vec(-1.0f64..1.0, 60),
        s2 in prop::collection::vec(-1.0f64..1.0, 60),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        p in 1usize..6,
        step in 1usize..4,
    ) {
        let c = cfg(p, step, 0.0);
        let mix: Vec<f64> = s1.iter().zip(&s2).map(|(x, y)| a * x + b * y).collect();
        let e1 = delay_embed(&signal(&s1, 0.1), &c).unwrap();
        let e2 = delay_embed(&signal(&s2, 0.1), &c).unwrap();
        let em = delay_embed(&signal(&mix, 0.1), &c).unwrap();
        let combo = e1.states() * a + e2.states() * b;
        prop_assert!((em.states() - combo).amax() < 1e-12);
    }

    #[test]
    fn embedding_commutes_with_time_shift(
        s in prop::collection::vec(-1.0f64..1.0, 80),
        shift in 1usize..10,
        p in 1usize..5,
    ) {
        let c = cfg(p, 1, 0.0);
        let full = delay_embed(&signal(&s, 0.5), &c).unwrap();
        let shifted = delay_embed(&signal(&s[shift..], 0.5), &c).unwrap();
        for i in 0..shifted.len() {
            prop_assert_eq!(shifted.sample(i), full.sample(i + shift));
        }
    }

    #[test]
    fn first_coordinate_is_the_trimmed_signal(
        s in prop::collection::vec(-1.0f64..1.0, 50),
        p in 1usize..5,
        trim_samples in 0usize..10,
    ) {
        let dt = 0.25;
        let c = cfg(p, 2, trim_samples as f64 * dt);
        let e = delay_embed(&signal(&s, dt), &c).unwrap();
        for i in 0..e.len() {
            prop_assert_eq!(e.states()[(i, 0)], s[trim_samples + i]);
        }
    }

    #[test]
    fn frequency_count_ignores_amplitude_scale(scale in 1e-3f64..1e3) {
        let dt = 0.05;
        let s: Vec<f64> = (0..4096)
            .map(|i| {
                let t = i as f64 * dt;
                (-0.01 * t).exp() * ((1.3 * t).sin() + 0.5 * (3.1 * t).sin())
            })
            .collect();
        let scaled: Vec<f64> = s.iter().map(|v| v * scale).collect();
        let n1 = count_dominant_frequencies(&signal(&s, dt), 0, 30.0).unwrap();
        let n2 = count_dominant_frequencies(&signal(&scaled, dt), 0, 30.0).unwrap();
        prop_assert_eq!(n1, n2);
        prop_assert_eq!(n1, 2);
    }
}

#[test]
fn multi_channel_embedding_concatenates_delays() {
    let n = 30;
    let states = DMatrix::from_fn(n, 2, |i, j| (i as f64) + 100.0 * j as f64);
    let tr = Trajectory::uniform(0.0, 1.0, states, vec!["a".into(), "b".into()]).unwrap();
    let e = delay_embed(&tr, &cfg(3, 1, 0.0)).unwrap();
    assert_eq!(e.dim(), 6);
    assert_eq!(e.len(), n - 2);
    let row = e.sample(0);
    assert_eq!(row.as_slice(), &[0.0, 1.0, 2.0, 100.0, 101.0, 102.0]);
}
