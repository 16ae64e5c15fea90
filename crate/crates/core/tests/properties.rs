mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use trialign::evalstats::{cochran_q, CochranInput};
use trialign::feedback::{self, Example};
use trialign::premap::{decode_credential, verify};
use trialign::rgid::{self, DecayOverlay, EconOverlay, Overlay, TrustOverlay};

fn opt<T: std::fmt::Debug + Clone + 'static>(s: impl Strategy<Value = T> + 'static) -> BoxedStrategy<Option<T>> {
    prop_oneof![Just(None), s.prop_map(Some)].boxed()
}

fn overlay() -> impl Strategy<Value = Overlay> {
    let econ = opt(
        (opt(0.1..0.5f64), opt(0.1..1.0f64), opt(0.0..0.1f64), opt(0.0..1.0f64)).prop_map(
            |(fc_max, p_market_per_sample, eta_cost_per_sample, gamma)| EconOverlay {
                fc_max,
                p_market_per_sample,
                eta_cost_per_sample,
                gamma,
            },
        ),
    );
    let decay = opt(
        (opt(1.0..200.0f64), opt(1.0..1000.0f64)).prop_map(|(ttl_hours, spoilage_rate_per_min)| DecayOverlay {
            ttl_hours,
            spoilage_rate_per_min,
        }),
    );
    let weights = opt(
        prop::collection::btree_map(prop::sample::select(vec!["Q", "S", "M"]), 0.5..4.0f64, 0..3).prop_map(|m| {
            m.into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect::<BTreeMap<_, _>>()
        }),
    );
    let trust = opt(weights.prop_map(|layer_weights| TrustOverlay {
        layer_weights,
        ..Default::default()
    }));
    let omega = opt(prop::collection::vec(0.0..1.0f64, 4));
    (econ, decay, trust, omega).prop_map(|(econ, decay, trust, omega)| Overlay {
        econ,
        decay,
        trust,
        omega,
        ..Default::default()
    })
}

const TEMPLATE: &str = r#"
[base.econ]
fc_max = 0.3
gamma = 0.5
eta_cost_per_sample = 0.02

[categories.pome]
phi = [
  { id = "weight", plane = "general", f_min = 50.0, f_max = 200.0, unit = "g", screening = true },
  { id = "stem", plane = "top", source = "stem_integrity", f_max = 1.0, unit = "fraction" },
  { id = "scar", plane = "side", source = "scar_area", f_max = 2.0, unit = "cm2", higher_is_better = false },
]
omega = [W0, W1, W2]

[categories.pome.thresholds]
tau_final = TAU
cuts = [{ score = TAU, grade = "C" }, { score = CUTB, grade = "B" }]

[[varieties]]
origin = "o"
variety = "v"
category = "pome"
econ = { p_market_per_sample = PRICE }
decay = { ttl_hours = TTL, spoilage_rate_per_min = 100.0 }
"#;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn overlay_merge_is_associative(a in overlay(), b in overlay(), c in overlay()) {
        prop_assert_eq!(a.merge(&b).merge(&c), a.merge(&b.merge(&c)));
    }

    #[test]
    fn dictionary_render_round_trips(
        w in (1u32..100, 1u32..100, 1u32..100),
        tau in 0.2..0.6f64,
        gap in 0.01..0.3f64,
        price in 0.05..5.0f64,
        ttl in 1.0..500.0f64,
    ) {
        let s = (w.0 + w.1 + w.2) as f64;
        let text = TEMPLATE
            .replace("W0", &format!("{:?}", w.0 as f64 / s))
            .replace("W1", &format!("{:?}", w.1 as f64 / s))
            .replace("W2", &format!("{:?}", 1.0 - (w.0 + w.1) as f64 / s))
            .replace("CUTB", &format!("{:?}", tau + gap))
            .replace("TAU", &format!("{tau:?}"))
            .replace("PRICE", &format!("{price:?}"))
            .replace("TTL", &format!("{ttl:?}"));
        let repo = rgid::load_dictionary(&text).unwrap();
        let doc = repo.to_document().unwrap();
        let again = rgid::load_dictionary(&doc).unwrap();
        let a: Vec<_> = repo.entries().cloned().collect();
        let b: Vec<_> = again.entries().cloned().collect();
        prop_assert_eq!(a, b);
        prop_assert_eq!(doc, again.to_document().unwrap());
    }

    #[test]
    fn gradient_matches_central_differences(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let batch = common::random_batch(&mut r, 20, 4);
        let theta = common::random_simplex(&mut r, 4);
        let g = feedback::gradient(&theta, &batch).unwrap();
        let h = 1e-5;
        for k in 0..4 {
            let (mut up, mut dn) = (theta.clone(), theta.clone());
            up[k] += h;
            dn[k] -= h;
            let fd = (feedback::loss(&up, &batch).unwrap() - feedback::loss(&dn, &batch).unwrap()) / (2.0 * h);
            prop_assert!((g[k] - fd).abs() <= 1e-6 * fd.abs().max(1e-3), "k={} analytic {} fd {}", k, g[k], fd);
        }
    }

    #[test]
    fn projection_lands_on_simplex(v in prop::collection::vec(-3.0..3.0f64, 1..12)) {
        let p = feedback::project_simplex(&v);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // projecting twice changes nothing
        let q = feedback::project_simplex(&p);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn credential_round_trip_and_corruption(seed in any::<u64>(), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let mut r = common::rng(seed);
        let c = common::random_credential(&mut r);
        let bytes = c.to_bytes().unwrap();
        let back = decode_credential(&bytes).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes.clone());
        prop_assert!(verify(&c.qr_text(), &back).unwrap());
        let mut bad = bytes.clone();
        let at = pos.index(bad.len());
        bad[at] ^= 1 << bit;
        prop_assert!(decode_credential(&bad).is_err());
    }

    #[test]
    fn cochran_q_ignores_option_order(g in prop::collection::vec(0u64..50, 3..7), seed in any::<u64>()) {
        // build a response matrix with those column totals, then shuffle columns
        let n = *g.iter().max().unwrap() as usize + 3;
        let rows: Vec<Vec<u8>> = (0..n)
            .map(|i| g.iter().map(|&c| (i < c as usize) as u8).collect())
            .collect();
        let base = cochran_q(&CochranInput::Matrix(rows.clone()));
        let mut perm: Vec<usize> = (0..g.len()).collect();
        let mut r = common::rng(seed);
        use rand::seq::SliceRandom;
        perm.shuffle(&mut r);
        let shuffled: Vec<Vec<u8>> = rows.iter().map(|row| perm.iter().map(|&j| row[j]).collect()).collect();
        let other = cochran_q(&CochranInput::Matrix(shuffled));
        match (base, other) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.q.to_bits(), b.q.to_bits()),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }
}

#[test]
fn buffer_conserves_records_over_many_operations() {
    common::buffer_conservation(100_000, 17).unwrap();
}

#[test]
fn safe_steps_never_increase_loss() {
    let mut r = common::rng(5);
    let batch: Vec<Example> = common::random_batch(&mut r, 50, 5);
    let eta = feedback::safe_step_size(&batch).unwrap();
    let mut theta = common::random_simplex(&mut r, 5);
    let mut prev = feedback::loss(&theta, &batch).unwrap();
    for _ in 0..100 {
        theta = feedback::update_step(&theta, &batch, eta).unwrap();
        let l = feedback::loss(&theta, &batch).unwrap();
        assert!(l <= prev + 1e-15, "{l} > {prev}");
        prev = l;
    }
}
