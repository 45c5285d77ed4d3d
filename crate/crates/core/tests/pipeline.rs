//! End-to-end run at the labelling energy: periodic orbit, channels, Melnikov data.

use std::f64::consts::TAU;

use kirkwood::dynamics::MassParams;
use kirkwood::homoclinic::{self, HomoclinicSetup, DISCOVERY_MESH, J_LABEL, PX_TOL};
use kirkwood::integrate::{Integrator, IntegratorConfig};
use kirkwood::melnikov::{self, MelnikovConfig};
use kirkwood::porbit;
use kirkwood::section::SectionMap;

fn map() -> SectionMap {
    SectionMap::new(Integrator::new(MassParams::default(), IntegratorConfig::default()))
}

#[test]
fn label_energy_pipeline() {
    let map = map();
    let mu = map.params().mu;
    let setup = HomoclinicSetup::at_energy(&map, J_LABEL, None).unwrap();
    let po = &setup.po;
    assert!(po.lambda_u > 1.0);
    assert!((po.T - TAU).abs() < 20.0 * mu);

    let channels = homoclinic::discover_channels(&map, &setup, DISCOVERY_MESH).unwrap();
    assert_eq!(channels.iter().map(|c| c.i).collect::<Vec<_>>(), [1, 2, 3, 4]);
    for c in &channels {
        assert!(c.z.px.abs() <= PX_TOL, "channel {} p_x = {:e}", c.i, c.z.px);
        assert!(c.us_discrepancy < 1e-8);
        assert!(c.theta.abs() < 1e-3);
    }

    let cfg = MelnikovConfig::default();
    let recs: Vec<_> = channels.iter().map(|c| melnikov::melnikov(&map, c, &cfg).unwrap()).collect();
    for r in &recs {
        assert!((r.alpha_plus + r.alpha_minus).abs() < 1e-6, "channel {}", r.i);
        assert!(r.B_out.re.abs() < 1e-6);
        assert!(r.tail_estimate <= cfg.cauchy_tol);
    }
    // reflection-related channels share alpha
    assert!((recs[1].alpha - recs[2].alpha).abs() < 1e-3);
    assert!((recs[0].alpha - recs[3].alpha).abs() < 1e-3);

    let theta: Vec<f64> = (0..16).map(|k| TAU * k as f64 / 16.0).collect();
    let surf = melnikov::sigma0_surface(&recs[1..2], &recs[2..3], &theta).unwrap();
    assert!(surf.min_over_theta().iter().all(|&s| s > 0.0));
}

#[test]
fn energy_without_the_orbit_is_an_error() {
    let map = map();
    assert!(porbit::find_resonant_po(&map, -1.0, None).is_err());
    assert!(HomoclinicSetup::at_energy(&map, -1.0, None).is_err());
}
