use std::path::PathBuf;

use flexagg::ingest::{minute_of_day, snapshot_at, FleetFile, Profiles, SnapshotOptions};
use flexagg::netmodel::NetworkModel;
use flexagg::synth;
use flexagg::uncertainty::DayType;

fn data(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn bundled_files_match_the_generators() {
    assert_eq!(NetworkModel::from_json(&data("feeder_25.json")).unwrap(), synth::feeder_25());
    assert_eq!(FleetFile::from_json(&data("fleet_25.json")).unwrap(), synth::fleet_25());
    assert_eq!(FleetFile::from_json(&data("fleet_25_pv_bess.json")).unwrap(), synth::fleet_25_pv_bess());
    let prof = Profiles::read_csv(data("profiles_cloudy.csv").as_bytes()).unwrap();
    assert_eq!(prof.times.len(), 288);
    assert_eq!(prof.times[0], "00:00");
    assert_eq!(prof.times[287], "23:55");
}

#[test]
fn profile_csv_round_trip() {
    let net = synth::feeder_25();
    let fleet = synth::fleet_25();
    let prof = synth::profiles(&net, &fleet, DayType::Sunny, 900.0, 3);
    let text = prof.write_csv();
    let back = Profiles::read_csv(text.as_bytes()).unwrap();
    assert_eq!(back.write_csv(), text);
    assert_eq!(back.times, prof.times);
}

#[test]
fn profile_errors() {
    assert!(Profiles::read_csv("when,p:1.a\n".as_bytes()).is_err());
    assert!(Profiles::read_csv("time,p:1.a,q:1.a\n".as_bytes()).is_err());
    assert!(Profiles::read_csv("time,p:1.a,q:1.a\n00:00,1,x\n".as_bytes()).is_err());
    assert!(Profiles::read_csv("time,p:1.a\n00:00,1\n".as_bytes()).is_err());
    assert!(Profiles::read_csv("time,volts\n00:00,1\n".as_bytes()).is_err());
}

#[test]
fn clock_labels() {
    assert_eq!(minute_of_day("00:00"), Some(0));
    assert_eq!(minute_of_day("19:30"), Some(1170));
    assert_eq!(minute_of_day("noon"), None);
    let prof = synth::profiles(&synth::feeder_25(), &synth::fleet_25(), DayType::Cloudy, 900.0, 1);
    assert_eq!(prof.rows_every(120).len(), 12);
    assert_eq!(prof.row_of("12:00"), Some(144));
}

#[test]
fn snapshot_assigns_every_load_once() {
    let net = synth::feeder_25();
    let fleet = synth::fleet_25();
    let prof = synth::profiles(&net, &fleet, DayType::Cloudy, 900.0, 1);
    let row = prof.row_of("19:00").unwrap();
    let snap = snapshot_at(&net, &fleet, &prof, row, &SnapshotOptions::default()).unwrap();
    let pu = net.per_unit();
    let total: f64 = prof.loads.values().map(|(p, _)| pu.kw_to_pu(p[row])).sum();
    let cl: f64 = snap.fleet.controllable_loads.iter().map(|c| c.p_sched).sum();
    let ncl: f64 = snap.fleet.ncl.iter().map(|n| n.p).sum();
    assert!((cl + ncl - total).abs() < 1e-12);
    assert_eq!(snap.fleet.n_cl(), fleet.controllable_loads.len());
    assert_eq!(snap.fleet.n_pv(), fleet.pv.len());
}

#[test]
fn fleet_without_loads_keeps_inverters() {
    let fleet = synth::fleet_25();
    let bare = fleet.without_controllable_loads();
    assert!(bare.controllable_loads.is_empty());
    assert_eq!(bare.pv, fleet.pv);
    assert_eq!(bare.bess, fleet.bess);
}

#[test]
fn two_controllable_loads_on_one_phase_are_rejected() {
    let net = synth::feeder_25();
    let mut fleet = synth::fleet_25();
    let mut dup = fleet.controllable_loads[0].clone();
    dup.id = "dup".into();
    fleet.controllable_loads.push(dup);
    let prof = synth::profiles(&net, &synth::fleet_25(), DayType::Cloudy, 900.0, 1);
    assert!(snapshot_at(&net, &fleet, &prof, 0, &SnapshotOptions::default()).is_err());
}

#[test]
fn unknown_fleet_field_is_rejected() {
    assert!(FleetFile::from_json(r#"{"pv": [], "wind": []}"#).is_err());
}
