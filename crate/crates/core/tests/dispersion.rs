use lbaw_core::dispersion::*;
use lbaw_core::fem::{ModeKind, ModeLabel};
use lbaw_core::materials::bundled_materials;
use proptest::prelude::*;

fn small(ratios: Vec<f64>) -> SweepConfig {
    SweepConfig {
        ratios,
        f_max: 2e9,
        ..SweepConfig::default()
    }
}

const S0: ModeLabel = ModeLabel { kind: ModeKind::S0, order: 1 };

#[test]
fn single_ratio_has_coupled_s0() {
    let res = run_sweep(&small(vec![0.1]), &bundled_materials(), 0).unwrap();
    let s0 = res.family(S0);
    assert_eq!(s0.len(), 1);
    assert!(s0[0].kt2 > 0.0 && s0[0].kt2 < 1.0);
}

#[test]
fn output_is_sorted_bounded_and_permutation_invariant() {
    let db = bundled_materials();
    let a = run_sweep(&small(vec![0.1, 0.3, 0.6]), &db, 0).unwrap();
    let b = run_sweep(&small(vec![0.6, 0.1, 0.3]), &db, 1).unwrap();
    assert_eq!(a.points, b.points);
    assert_eq!(a.gaps, b.gaps);
    for f in &SweepConfig::default().families {
        let pts = a.family(f.label);
        assert!(pts.len() <= 3);
        assert!(pts.windows(2).all(|w| w[0].wm_wp < w[1].wm_wp));
    }
    for p in &a.points {
        assert!(p.fp >= p.fs && (0.0..1.0).contains(&p.kt2) && (0.0..=1.0).contains(&p.eta));
    }
}

#[test]
fn zero_piezo_scale_removes_coupling() {
    let cfg = SweepConfig {
        piezo_scale: 0.0,
        ..small(vec![0.1, 0.5])
    };
    let res = run_sweep(&cfg, &bundled_materials(), 0).unwrap();
    assert!(!res.points.is_empty());
    assert!(res.points.iter().all(|p| p.kt2 < 1e-9));
}

#[test]
fn unknown_material_is_a_config_error() {
    let cfg = SweepConfig {
        piezo: "quartz".into(),
        ..small(vec![0.1])
    };
    assert!(run_sweep(&cfg, &bundled_materials(), 0).is_err());
}

fn point() -> impl Strategy<Value = DispersionPoint> {
    let kind = prop_oneof![
        Just(ModeKind::S0),
        Just(ModeKind::SH0),
        Just(ModeKind::Flexural),
        Just(ModeKind::Other)
    ];
    (0.01..2.0f64, kind, 1u32..4, 1e8..4e9f64, 0.0..0.6f64, 0.0..1.0f64, 0.0..1.0f64).prop_map(
        |(wm_wp, kind, order, fs, kt2, eta, mac)| DispersionPoint {
            wm_wp,
            mode: ModeLabel { kind, order },
            fs,
            fp: fs / (1.0 - kt2).sqrt(),
            kt2,
            eta,
            mac,
        },
    )
}

proptest! {
    #[test]
    fn csv_round_trip_is_exact(points in prop::collection::vec(point(), 0..30)) {
        prop_assert_eq!(parse_csv(&export_csv(&points)).unwrap(), points);
    }

    #[test]
    fn optimum_is_the_largest_kt2(points in prop::collection::vec(point(), 3..30)) {
        let best = find_optimum(&points).unwrap();
        prop_assert!(points.iter().all(|p| p.kt2 <= best.kt2));
    }

    #[test]
    fn config_text_round_trip(lo in 0.01..0.5f64, n in 3usize..40, nz in 5usize..12) {
        let c = SweepConfig { ratios: log_grid(lo, 1.5, n), nz, ..SweepConfig::default() };
        let back = SweepConfig::parse(&c.to_text()).unwrap();
        prop_assert_eq!(back.ratios, c.ratios);
        prop_assert_eq!(back.nz, nz);
        prop_assert_eq!(back.families, c.families);
    }
}
