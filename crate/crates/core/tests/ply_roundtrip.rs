use graphsim::ply::{read_ply, write_ply, PlyFormat};
use graphsim::{BoundingBox, PointCloud};
use nalgebra::Point3;
use proptest::prelude::*;

fn coord() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6..1e6f64,
        (-1000i32..1000).prop_map(|v| v as f64 * 0.5),
        any::<f32>().prop_filter("finite", |v| v.is_finite()).prop_map(f64::from),
    ]
}

fn cloud_strategy() -> impl Strategy<Value = PointCloud> {
    (1usize..300).prop_flat_map(|n| {
        (
            prop::collection::vec((coord(), coord(), coord()), n),
            prop::option::of(prop::collection::vec(any::<[u8; 3]>(), n)),
        )
            .prop_map(|(pts, cols)| {
                let c = PointCloud::new(pts.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect()).unwrap();
                match cols {
                    Some(cols) => c.with_colors(cols).unwrap(),
                    None => c,
                }
            })
    })
}

fn round_trip(cloud: &PointCloud, format: PlyFormat) -> PointCloud {
    let mut buf = Vec::new();
    write_ply(cloud, &mut buf, format).unwrap();
    read_ply(buf.as_slice()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binary_is_bit_exact(cloud in cloud_strategy()) {
        let back = round_trip(&cloud, PlyFormat::BinaryLittleEndian);
        prop_assert_eq!(back.len(), cloud.len());
        for (a, b) in cloud.positions().iter().zip(back.positions()) {
            for i in 0..3 {
                prop_assert_eq!(a[i].to_bits(), b[i].to_bits());
            }
        }
        prop_assert_eq!(cloud.colors(), back.colors());
    }

    #[test]
    fn ascii_is_close(cloud in cloud_strategy()) {
        let back = round_trip(&cloud, PlyFormat::Ascii);
        for (a, b) in cloud.positions().iter().zip(back.positions()) {
            for i in 0..3 {
                prop_assert!((a[i] - b[i]).abs() <= 1e-5 * a[i].abs().max(1e-30));
            }
        }
        prop_assert_eq!(cloud.colors(), back.colors());
    }

    #[test]
    fn ascii_and_binary_loads_agree(cloud in cloud_strategy()) {
        let from_ascii = round_trip(&cloud, PlyFormat::Ascii);
        let from_binary = round_trip(&from_ascii, PlyFormat::BinaryLittleEndian);
        prop_assert_eq!(from_ascii, from_binary);
    }

    #[test]
    fn bounding_box_ignores_order(cloud in cloud_strategy(), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..cloud.len()).collect();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffled = cloud.select(&order);
        prop_assert_eq!(cloud.bounding_box().unwrap(), shuffled.bounding_box().unwrap());
        prop_assert_eq!(BoundingBox::of(shuffled.positions()).unwrap(), cloud.bounding_box().unwrap());
    }
}
