use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;
use sector_ks::config::{parse_config, preset};
use sector_ks::fields::{mass, normalize_to_mass, tm_gap, Field};
use sector_ks::geometry::{DomainSpec, SectorMesh};
use sector_ks::radial1d::{make_blowup_candidate, restrict_to_sector, Pchip, RadialMesh};
use sector_ks::scheme::{detect_blowup, DiagnosticsRecord, SchemeConfig};
use sector_ks::geometry::PolarPoint;
use sector_ks::solver2d::{step, SimState};

fn mesh_strategy() -> impl Strategy<Value = Arc<SectorMesh>> {
    (0.2f64..2.0 * PI, 0.5f64..2.0, 2usize..10, 2usize..10, 1.0f64..1.3).prop_map(|(theta, r, nr, nphi, g)| {
        Arc::new(SectorMesh::new(DomainSpec::new(theta, r).unwrap(), nr, nphi, g).unwrap())
    })
}

fn field_on(mesh: Arc<SectorMesh>, seed: &[f64]) -> Field {
    let values = (0..mesh.n_cells()).map(|i| seed[i % seed.len()]).collect();
    Field::new(mesh, values).unwrap()
}

fn record(t: f64, dt: f64, linf: f64) -> DiagnosticsRecord {
    DiagnosticsRecord {
        step: 0,
        t,
        dt,
        mass_u: 1.0,
        mass_v: 1.0,
        linf_u: linf,
        min_u: 0.0,
        energy: 0.0,
        dissipation: 0.0,
        vmean: 0.0,
        ext_quantity: 0.0,
        argmax: PolarPoint { r: 0.0, phi: 0.0 },
        mass_defect: 0.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mass_is_linear(mesh in mesh_strategy(), a in prop::collection::vec(0.0f64..5.0, 1..8),
                      b in prop::collection::vec(0.0f64..5.0, 1..8), s in -3.0f64..3.0) {
        let f = field_on(mesh.clone(), &a);
        let g = field_on(mesh, &b);
        let h = f.combine(1.0, &g, s).unwrap();
        let want = mass(&f) + s * mass(&g);
        prop_assert!((mass(&h) - want).abs() <= 1e-12 * (1.0 + mass(&f) + s.abs() * mass(&g)));
    }

    #[test]
    fn gap_ignores_shifts_of_nonnegative_data(mesh in mesh_strategy(), a in prop::collection::vec(0.0f64..5.0, 1..8),
                                   c in 0.0f64..100.0) {
        let phi = field_on(mesh.clone(), &a);
        let shifted = Field::new(mesh, phi.values().iter().map(|x| x + c).collect()).unwrap();
        let theta = phi.mesh().domain().theta().min(PI);
        let g0 = tm_gap(&phi, theta).unwrap();
        let g1 = tm_gap(&shifted, theta).unwrap();
        prop_assert!((g0 - g1).abs() <= 1e-10 * (1.0 + c), "{} vs {}", g0, g1);
    }

    #[test]
    fn normalization_hits_target(mesh in mesh_strategy(), a in prop::collection::vec(0.01f64..5.0, 1..8),
                                 target in 0.1f64..50.0) {
        let f = normalize_to_mass(&field_on(mesh, &a), target).unwrap();
        prop_assert!((mass(&f) - target).abs() <= 1e-12 * target);
    }

    #[test]
    fn step_conserves_mass_and_positivity(mesh in mesh_strategy(), a in prop::collection::vec(0.0f64..3.0, 1..8),
                                          b in prop::collection::vec(0.0f64..3.0, 1..8), dt in 1e-5f64..1e-2) {
        let u = field_on(mesh.clone(), &a);
        let v = field_on(mesh, &b);
        let m0 = mass(&u);
        let state = SimState::new(u, v, dt).unwrap();
        match step(&state, &SchemeConfig::default()) {
            Ok((next, _)) => {
                prop_assert!((mass(&next.u) - m0).abs() <= 1e-11 * (1.0 + m0));
                prop_assert!(next.u.min() >= 0.0);
                prop_assert!(next.v.values().iter().all(|x| x.is_finite()));
            }
            // A rejected step must leave the caller's state untouched, which the
            // borrow already guarantees; only a negativity rejection is allowed.
            Err(e) => prop_assert!(e.to_string().contains("negative"), "{}", e),
        }
    }

    #[test]
    fn pchip_keeps_monotone_data_monotone(steps in prop::collection::vec(0.01f64..1.0, 3..12),
                                          rises in prop::collection::vec(0.0f64..2.0, 3..12)) {
        let n = steps.len().min(rises.len());
        let mut x = vec![0.0];
        let mut y = vec![0.0];
        for k in 0..n {
            x.push(x[k] + steps[k]);
            y.push(y[k] + rises[k]);
        }
        let p = Pchip::new(&x, &y);
        let mut last = f64::NEG_INFINITY;
        for k in 0..=200 {
            let t = x[x.len() - 1] * k as f64 / 200.0;
            let val = p.eval(t);
            prop_assert!(val >= last - 1e-12);
            prop_assert!(val >= y[0] - 1e-12 && val <= y[y.len() - 1] + 1e-12);
            last = val;
        }
        for (xi, yi) in x.iter().zip(&y) {
            prop_assert!((p.eval(*xi) - yi).abs() <= 1e-12 * (1.0 + yi.abs()));
        }
    }

    #[test]
    fn restriction_scales_mass_by_angle(theta in 0.2f64..2.0 * PI, disc_mass in 1.0f64..40.0,
                                        conc in 0.05f64..0.5, nr in 4usize..24) {
        let sector = Arc::new(SectorMesh::new(DomainSpec::new(theta, 1.0).unwrap(), nr, 4, 1.05).unwrap());
        let radial = Arc::new(RadialMesh::new(1.0, 64, 1.0).unwrap());
        let profile = make_blowup_candidate(radial, disc_mass, conc).unwrap();
        let (u, _) = restrict_to_sector(&profile, sector).unwrap();
        let want = theta / (2.0 * PI) * disc_mass;
        prop_assert!((mass(&u) - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn threshold_rule_fires_exactly_at_threshold(linf in 1.0f64..1e9, threshold in 1e2f64..1e8) {
        let scheme = SchemeConfig { linf_blowup: threshold, ..Default::default() };
        let history = vec![record(0.0, 1e-3, 1.0), record(1e-3, 1e-3, linf)];
        prop_assert_eq!(detect_blowup(&history, &scheme).is_blowup(), linf >= threshold);
    }

    #[test]
    fn config_round_trips(theta in 0.8f64..2.0 * PI, nr in 2usize..100, mass_ in 0.1f64..50.0,
                          dt_max in 1e-4f64..1.0, g in 1.0f64..1.3) {
        let base = parse_config(preset("quarter_subcritical").unwrap()).unwrap();
        let mut cfg = base.clone();
        cfg.domain = DomainSpec::new(theta, 1.0).unwrap();
        cfg.nr = nr;
        cfg.grading = g;
        cfg.mass = mass_;
        cfg.scheme.dt_max = dt_max;
        prop_assert_eq!(parse_config(&cfg.to_toml()).unwrap(), cfg);
    }
}
