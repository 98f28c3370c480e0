use std::path::PathBuf;

use underreport::bundle::{read_bundle, write_bundle};
use underreport::schema::{load_csv, Schema};
use underreport_core::ingest::make_semisynthetic_outcomes;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

#[test]
fn compas_loads_with_six_features() {
    let schema = Schema::from_file(&data("compas.schema.json")).unwrap();
    let d = load_csv(&data("compas-scores-two-years.csv"), &schema).unwrap();
    assert_eq!(d.n(), 7214);
    assert_eq!(d.d(), 6);
    let aa = d.g.iter().filter(|&&g| g == 0).count();
    assert_eq!(aa, 3696);
    assert_eq!(d.provenance["source_sha256"].len(), 64);
}

#[test]
fn semisynthetic_bundle_round_trips() {
    let schema = Schema::from_file(&data("compas.schema.json")).unwrap();
    let d = load_csv(&data("compas-scores-two-years.csv"), &schema).unwrap();
    let (s, model) = make_semisynthetic_outcomes(&d, None).unwrap();
    let y = s.y.as_ref().unwrap();
    let fitted = model.predict_all(&s.x).unwrap();
    assert!(y.iter().zip(&fitted).all(|(a, b)| (a - b).abs() < 1e-9));

    let dir = tempfile::TempDir::new().unwrap();
    let path = dir.path().join("compas.csv");
    write_bundle(&path, &s).unwrap();
    assert_eq!(read_bundle(&path).unwrap(), s);
}
