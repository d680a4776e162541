use ctvforge::sdt::{boundary_voxels, edt_squared, signed_distance};
use ctvforge::voxgrid::{Dims, MaskVolume, Spacing};
use proptest::prelude::*;

fn mask_strategy(margin: usize) -> impl Strategy<Value = MaskVolume> {
    (
        (2 * margin + 1)..(2 * margin + 12),
        (2 * margin + 1)..(2 * margin + 12),
        (2 * margin + 1)..(2 * margin + 8),
        prop::bool::ANY,
        any::<u64>(),
    )
        .prop_map(move |(nx, ny, nz, aniso, seed)| {
            let dims = Dims::new(nx, ny, nz).unwrap();
            let s = if aniso {
                Spacing::new(1.0, 1.0, 2.5).unwrap()
            } else {
                Spacing::isotropic(1.0).unwrap()
            };
            let mut state = seed | 1;
            let mut data: Vec<u8> = (0..dims.len())
                .map(|i| {
                    let (x, y, z) = dims.coords(i);
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    let inner = x >= margin && y >= margin && z >= margin && x + margin < nx && y + margin < ny && z + margin < nz;
                    (inner && state % 3 != 0) as u8
                })
                .collect();
            let c = dims.index(nx / 2, ny / 2, nz / 2);
            data[c] = 1;
            MaskVolume::new(dims, s, data).unwrap()
        })
}

fn center_mm(m: &MaskVolume, i: usize) -> [f64; 3] {
    let (x, y, z) = m.dims().coords(i);
    let s = m.spacing();
    [x as f64 * s.dx, y as f64 * s.dy, z as f64 * s.dz]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sign_rule_holds(m in mask_strategy(0)) {
        let sdt = signed_distance(&m).unwrap();
        let gamma = boundary_voxels(&m).unwrap();
        for (i, &v) in sdt.data().iter().enumerate() {
            if m.at(i) {
                prop_assert!(v <= 0.0);
            } else {
                prop_assert!(v > 0.0);
            }
            prop_assert_eq!(v == 0.0, gamma.at(i));
        }
    }

    #[test]
    fn magnitude_matches_boundary_edt(m in mask_strategy(0)) {
        let sdt = signed_distance(&m).unwrap();
        let sq = edt_squared(&boundary_voxels(&m).unwrap()).unwrap();
        for (&v, &d2) in sdt.data().iter().zip(&sq) {
            prop_assert_eq!(v.abs(), d2.sqrt() as f32);
        }
    }

    #[test]
    fn lipschitz_between_face_neighbors(m in mask_strategy(0)) {
        let sdt = signed_distance(&m).unwrap();
        let d = m.dims();
        let s = m.spacing().as_array();
        let steps = [1, d.nx, d.nx * d.ny];
        for i in 0..d.len() {
            let (x, y, z) = d.coords(i);
            let at = [x, y, z];
            let n = d.as_array();
            for a in 0..3 {
                if at[a] + 1 < n[a] {
                    let j = i + steps[a];
                    let diff = (sdt.data()[i].abs() - sdt.data()[j].abs()).abs() as f64;
                    prop_assert!(diff <= s[a] + 1e-5, "axis {} diff {}", a, diff);
                }
            }
        }
    }

    /// The boundaries of a mask and of its complement are adjacent layers, so
    /// their distance fields differ by at most one voxel step. Voxels closer
    /// to the volume edge than to either boundary are skipped, because the
    /// complement's boundary also covers the edge.
    #[test]
    fn complement_magnitudes_within_one_step(m in mask_strategy(1)) {
        let inside = signed_distance(&m).unwrap();
        let outside = signed_distance(&m.complement()).unwrap();
        let d = m.dims();
        let s = m.spacing();
        let step = s.max_component() as f32 + 1e-5;
        let far = [(d.nx - 1) as f64 * s.dx, (d.ny - 1) as f64 * s.dy, (d.nz - 1) as f64 * s.dz];
        for i in 0..d.len() {
            let (a, b) = (inside.data()[i].abs(), outside.data()[i].abs());
            prop_assert!(b <= a + step, "voxel {} complement {} mask {}", i, b, a);
            let p = center_mm(&m, i);
            let edge = (0..3).map(|k| p[k].min(far[k] - p[k])).fold(f64::INFINITY, f64::min) as f32;
            if edge > a + step {
                prop_assert!(a <= b + step, "voxel {} mask {} complement {}", i, a, b);
            }
        }
    }
}

#[test]
fn isotropic_cube_center_depth() {
    let dims = Dims::new(11, 11, 11).unwrap();
    let m = MaskVolume::from_fn(dims, Spacing::isotropic(2.0).unwrap(), |x, y, z| {
        (2..9).contains(&x) && (2..9).contains(&y) && (2..9).contains(&z)
    });
    let sdt = signed_distance(&m).unwrap();
    assert_eq!(sdt.grid().get(5, 5, 5), -6.0);
    assert_eq!(sdt.grid().get(5, 5, 0), 4.0);
    assert_eq!(sdt.grid().get(2, 5, 5), 0.0);
}
