use std::collections::BTreeSet;

use agf_core::dataset::{LesionClass, Provenance, RoiImage, ROI_PIXELS};
use agf_rater::{draw_items, replay, ItemPool, SessionSpec};
use proptest::prelude::*;

fn pool(real: usize, synthetic: usize) -> ItemPool {
    let mk = |id: String, i: usize, synth: bool| RoiImage {
        id,
        patient_id: format!("p{i}"),
        class: LesionClass::ALL[i % 3],
        diameter_mm: 20.0,
        pixels: vec![0.5; ROI_PIXELS],
        provenance: if synth { Provenance::Synthetic { model: "m".into(), seed: 1 } } else { Provenance::Real },
    };
    let mut v: Vec<RoiImage> = (0..real).map(|i| mk(format!("r{i:03}"), i, false)).collect();
    v.extend((0..synthetic).map(|i| mk(format!("s{i:03}"), i, true)));
    ItemPool::new(v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Taking the whole pool yields every item exactly once, with the
    /// truth copied from the pool.
    #[test]
    fn full_draw_is_a_permutation(real in 0usize..40, synthetic in 0usize..40, seed in any::<u64>()) {
        prop_assume!(real + synthetic > 0);
        let p = pool(real, synthetic);
        let items = draw_items(&p, &SessionSpec { rater_id: "r".into(), real, synthetic, seed }).unwrap();
        prop_assert_eq!(items.len(), real + synthetic);
        let ids: BTreeSet<&str> = items.iter().map(|t| t.item_id.as_str()).collect();
        prop_assert_eq!(ids.len(), items.len());
        for t in &items {
            let roi = p.get(&t.item_id).unwrap();
            prop_assert_eq!(t.class, roi.class);
            prop_assert_eq!(t.real, roi.provenance.is_real());
        }
    }

    #[test]
    fn subset_draw_respects_counts_and_seed(real in 0usize..20, synthetic in 0usize..20, seed in any::<u64>()) {
        prop_assume!(real + synthetic > 0);
        let p = pool(25, 25);
        let spec = SessionSpec { rater_id: "r".into(), real, synthetic, seed };
        let a = draw_items(&p, &spec).unwrap();
        prop_assert_eq!(a.iter().filter(|t| t.real).count(), real);
        prop_assert_eq!(a.iter().filter(|t| !t.real).count(), synthetic);
        prop_assert_eq!(a, draw_items(&p, &spec).unwrap());
    }

    /// Arbitrary bytes never panic the log reader.
    #[test]
    fn replay_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
        let _ = replay(&bytes);
    }
}
