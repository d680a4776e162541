use ctvforge::phantom::{auto_oar, generate_case, generate_cohort, Organ, PhantomConfig};
use ctvforge::pipeline::{
    assemble_stack, assemble_with_source, augmented_view, jitter_components, sample_vois, AugmentPolicy, ChannelLayout,
    GtvLnSource, Normalization, OarSource, SdtSource, VoiLabel,
};
use ctvforge::voxgrid::{Dims, MaskVolume, TARGET_SPACING};
use proptest::prelude::*;

#[test]
fn default_cohort_satisfies_case_invariants() {
    let cases = generate_cohort(&PhantomConfig::default(), 30).unwrap();
    for c in &cases {
        let d = c.dims();
        for m in [&c.gtv, &c.lns, &c.lung, &c.heart, &c.spinal_canal, &c.ctv_truth] {
            assert_eq!(m.dims(), d);
            assert_eq!(m.spacing(), c.spacing());
        }
        assert!(!c.gtv.is_empty(), "{}", c.case_id);
        assert!(c.gtv_ln().is_subset_of(&c.ctv_truth), "{}", c.case_id);
        assert!(c.gtv.intersection(&c.lung).unwrap().is_empty(), "{}", c.case_id);
        assert!(c.ct.data().iter().all(|v| v.is_finite()));
        for organ in Organ::ALL {
            let auto = auto_oar(c, organ).unwrap();
            assert_eq!(auto.dims(), d);
        }
    }
}

#[test]
fn normalized_channels_stay_in_unit_range() {
    let norm = Normalization::default();
    for i in 0..6 {
        let case = generate_case(&PhantomConfig::default(), i).unwrap();
        for layout in ChannelLayout::ALL {
            for source in SdtSource::ALL {
                let stack = assemble_with_source(&case, layout, source, &AugmentPolicy::training(), &norm, i as u64).unwrap();
                assert_eq!(stack.channels.len(), layout.count());
                for ch in &stack.channels {
                    assert!(ch.data().iter().all(|v| (-1.0..=1.0).contains(v)), "{} {:?}", layout.name(), source);
                }
            }
        }
    }
}

#[test]
fn clean_manual_stack_ignores_seed() {
    let case = generate_case(&PhantomConfig::default(), 3).unwrap();
    let policy = AugmentPolicy::eval(OarSource::Manual);
    let norm = Normalization::default();
    let a = assemble_stack(&case, ChannelLayout::CtAllSdt, &policy, &norm, 1).unwrap();
    let b = assemble_stack(&case, ChannelLayout::CtAllSdt, &policy, &norm, 999).unwrap();
    assert_eq!(a.channels, b.channels);
}

#[test]
fn channel_counts_per_layout() {
    let counts: Vec<usize> = ChannelLayout::ALL.iter().map(|l| l.count()).collect();
    assert_eq!(counts, [1, 2, 2, 5]);
}

#[test]
fn permuted_stack_is_rejected_by_checksum() {
    let case = generate_case(&PhantomConfig::default(), 1).unwrap();
    let stack = assemble_stack(
        &case,
        ChannelLayout::CtGtvLnSdt,
        &AugmentPolicy::eval(OarSource::Manual),
        &Normalization::default(),
        0,
    )
    .unwrap();
    assert!(stack.check_layout(ChannelLayout::CtGtvLnSdt.checksum()).is_ok());
    assert!(stack.check_layout(ChannelLayout::CtMask.checksum()).is_err());
}

#[test]
fn augmented_views_are_reproducible() {
    let case = generate_case(&PhantomConfig::default(), 2).unwrap();
    let norm = Normalization::default();
    let p = AugmentPolicy::training();
    let a = augmented_view(&case, ChannelLayout::CtAllSdt, &p, &norm, 42).unwrap();
    let b = augmented_view(&case, ChannelLayout::CtAllSdt, &p, &norm, 42).unwrap();
    assert_eq!(a, b);
}

#[test]
fn jittered_source_moves_tumor_channel() {
    let case = generate_case(&PhantomConfig::default(), 4).unwrap();
    let norm = Normalization::default();
    let p = AugmentPolicy::training();
    let clean = assemble_with_source(&case, ChannelLayout::CtMask, SdtSource::CLEAN_MANUAL, &p, &norm, 5).unwrap();
    let moved = (0..8).any(|seed| {
        let src = SdtSource {
            gtv_ln: GtvLnSource::Jittered,
            oar: OarSource::Manual,
        };
        let j = assemble_with_source(&case, ChannelLayout::CtMask, src, &p, &norm, seed).unwrap();
        j.channels[1] != clean.channels[1]
    });
    assert!(moved);
}

fn scattered(seed: u64) -> MaskVolume {
    let d = Dims::new(40, 40, 20).unwrap();
    MaskVolume::from_fn(d, TARGET_SPACING, |x, y, z| {
        x % 9 == 4 && y % 9 == 4 && z % 6 == 3 && (x + y + z + seed as usize) % 2 == 0
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jitter_within_ceil_bound(seed in any::<u64>(), hw in 0.0f64..4.0) {
        let m = scattered(seed);
        let out = jitter_components(&m, hw, seed).unwrap();
        let s = TARGET_SPACING.as_array();
        let bound: Vec<i64> = (0..3).map(|a| (hw / s[a]).ceil() as i64).collect();
        let d = m.dims();
        for i in (0..d.len()).filter(|&i| out.at(i)) {
            let (x, y, z) = d.coords(i);
            let p = [x as i64, y as i64, z as i64];
            let near = (0..d.len()).filter(|&j| m.at(j)).any(|j| {
                let (a, b, c) = d.coords(j);
                let q = [a as i64, b as i64, c as i64];
                (0..3).all(|k| (p[k] - q[k]).abs() <= bound[k])
            });
            prop_assert!(near, "voxel {:?} too far from any source voxel", p);
        }
    }

    #[test]
    fn vois_fit_and_positives_hit_target(seed in any::<u64>(), n_pos in 0usize..12, n_neg in 0usize..6) {
        let case = generate_case(&PhantomConfig::default(), (seed % 3) as usize).unwrap();
        let d = case.dims().as_array();
        let vois = sample_vois(&case.ctv_truth, n_pos, n_neg, [64, 64, 16], seed).unwrap();
        prop_assert_eq!(vois.len(), n_pos + n_neg);
        for v in &vois {
            for a in 0..3 {
                prop_assert!(v.origin[a] + v.size[a] <= d[a]);
            }
            if v.label == VoiLabel::Positive {
                prop_assert!(case.ctv_truth.get(v.center[0], v.center[1], v.center[2]));
            }
        }
    }
}
