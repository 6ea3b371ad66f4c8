//! End-to-end walkthrough of the public API: parse a knowledge library,
//! validate it, ingest a patient CSV, run the compliance analysis, and
//! print the critique report. The final sections feed deliberately broken
//! inputs through the same entry points to show how failures surface.
//!
//! Run with: `cargo run -p critiq-core --example walkthrough`

use critiq_core::engine::{analyze_patient, EngineConfig, PreparedKnowledge};
use critiq_core::ingest::{ingest_patient_records, load_mapping, PatientRecord};
use critiq_core::knowledge::validate::validate_library;
use critiq_core::knowledge::wire::parse_knowledge_library;

const LIBRARY: &str = r#"{
  "concepts": [
    {"id": "glucose", "kind": "primitive", "unit": "mg/dL",
     "persistence": {"good_before_s": 0, "good_after_s": 2592000}},
    {"id": "hba1c", "kind": "primitive", "unit": "%",
     "persistence": {"good_before_s": 0, "good_after_s": 5184000}},
    {"id": "metformin-admin", "kind": "event",
     "persistence": {"good_before_s": 0, "good_after_s": 2592000}},
    {"id": "diabetes-present", "kind": "abstract",
     "definition": {"op": "or", "children": [
       {"op": "cmp", "cmp": {"param": "hba1c", "operator": ">", "threshold": 6.5, "deviation": 0.5}},
       {"op": "cmp", "cmp": {"param": "glucose", "operator": ">", "threshold": 126, "deviation": 10}}
     ]}}
  ],
  "plans": [
    {"id": "glycemia-care", "name": "Glycemic management",
     "max_start_delay_s": 7776000,
     "conditions": [{"role": "filter", "expr": "diabetes-present"}],
     "intentions": [
       {"kind": "outcome", "mode": "maintain",
        "target": {"op": "cmp", "cmp": {"param": "hba1c", "operator": "<=", "threshold": 7.0, "deviation": 0.5}},
        "monitoring_delay_s": 7776000, "max_gap_s": 15552000}
     ],
     "body": [
       {"id": "metformin-start", "action_concept": "metformin-admin", "kind": "once",
        "earliest_offset_s": 0, "latest_offset_s": 2592000,
        "timing_deviation_s": 1209600, "min_repeat_gap_s": 2592000},
       {"id": "hba1c-test", "action_concept": "hba1c", "kind": "periodic",
        "earliest_offset_s": 0, "latest_offset_s": 2592000, "period_s": 7776000,
        "timing_deviation_s": 1209600, "min_repeat_gap_s": 2592000}
     ]}
  ]
}"#;

const MAPPING_CSV: &str = "\
external_id,internal_concept_id,unit_factor,unit_offset
GLUC_MMOL,glucose,18.0,0.0
HBA1C_PCT,hba1c,1.0,0.0
MET_500,metformin-admin,1.0,0.0
";

const DATA_CSV: &str = "\
patient_id,external_concept_id,value,valid_start,valid_stop,dose
p-001,GLUC_MMOL,8.33,2024-01-05T08:00:00Z,,
p-001,HBA1C_PCT,7.8,2024-01-20T09:00:00Z,,
p-001,MET_500,1,2024-01-25T10:00:00Z,,500
p-001,MET_500,1,2024-01-26T10:00:00Z,,500
p-001,HBA1C_PCT,7.2,2024-04-25T09:00:00Z,,
p-001,GLUC_MMOL,7.0,2024-10-15T08:00:00Z,,
";

fn main() {
    banner("1. parse + validate the knowledge library");
    let lib = parse_knowledge_library(LIBRARY).expect("library parses");
    let validation = validate_library(&lib);
    println!(
        "library ok: {} concepts, {} plans, {} validation findings",
        lib.concepts.len(),
        lib.plans.len(),
        validation.findings.len()
    );
    let knowledge = PreparedKnowledge::prepare(lib);
    println!("flattened paths: {:?}", knowledge.paths.iter().map(|p| &p.id).collect::<Vec<_>>());
    println!("library hash: {}", knowledge.library_hash);

    banner("2. ingest the patient CSV (with mmol/L -> mg/dL conversion)");
    let mapping = load_mapping(MAPPING_CSV.as_bytes(), &knowledge.lib).expect("mapping loads");
    let (records, report) =
        ingest_patient_records(DATA_CSV.as_bytes(), &mapping, &knowledge.lib).expect("csv ingests");
    println!(
        "rows in: {}, items out: {}, skipped: {}, unmapped: {} (balances: {})",
        report.rows_in,
        report.items_out,
        report.skipped.len(),
        report.unmapped.len(),
        report.balances()
    );
    let record = &records[0];
    for item in &record.items {
        println!(
            "  {} {} = {:?} dose {:?}",
            critiq_core::time::format_timestamp(item.valid_start),
            item.concept_id,
            item.value,
            item.dose
        );
    }

    banner("3. analyze the patient");
    let config = EngineConfig::default();
    let report = analyze_patient(&knowledge, &config, record, None).expect("analysis runs");
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));

    banner("4. determinism: analyzing twice yields byte-identical reports");
    let again = analyze_patient(&knowledge, &config, record, None).expect("second analysis runs");
    let a = serde_json::to_string(&report).unwrap();
    let b = serde_json::to_string(&again).unwrap();
    println!("byte-identical: {}", a == b);

    banner("5. probe: syntactically broken library JSON");
    match parse_knowledge_library("{\"concepts\": [{\"id\": ") {
        Ok(_) => println!("unexpectedly parsed"),
        Err(e) => println!("rejected: {e}"),
    }

    banner("6. probe: semantically broken library (dangling reference, bad timing)");
    let broken = r#"{
      "concepts": [
        {"id": "x", "kind": "abstract",
         "definition": {"op": "cmp", "cmp": {"param": "nope", "operator": ">", "threshold": 1, "deviation": -2}}}
      ],
      "plans": [
        {"id": "p", "conditions": [{"role": "filter", "expr": "x"}],
         "body": [{"id": "s", "action_concept": "x", "kind": "periodic", "latest_offset_s": -5}]}
      ]
    }"#;
    let lib = parse_knowledge_library(broken).expect("syntax is fine; semantics are not");
    let validation = validate_library(&lib);
    for finding in &validation.findings {
        println!("  {finding}");
    }

    banner("7. probe: dirty CSV rows are reported, not silently dropped");
    let dirty = "\
patient_id,external_concept_id,value,valid_start,valid_stop,dose
p-002,HBA1C_PCT,7.1,not-a-timestamp,,
p-002,MYSTERY_CODE,1,2024-01-05T08:00:00Z,,
p-002,HBA1C_PCT,,2024-01-06T08:00:00Z,,
p-002,HBA1C_PCT,6.9,2024-01-07T08:00:00Z,,
";
    let (recs, rep) =
        ingest_patient_records(dirty.as_bytes(), &mapping, &knowledge.lib).expect("reader works");
    println!(
        "rows in: {}, items out: {}, skipped: {}, unmapped: {} (balances: {})",
        rep.rows_in,
        rep.items_out,
        rep.skipped.len(),
        rep.unmapped.len(),
        rep.balances()
    );
    for s in rep.skipped.iter().chain(rep.unmapped.iter()) {
        println!("  row {}: {}", s.row, s.reason);
    }
    println!("clean items kept: {}", recs[0].items.len());

    banner("8. probe: a patient with no data yields an empty report");
    let empty = PatientRecord {
        patient_id: "p-empty".into(),
        demographics: Default::default(),
        items: vec![],
    };
    let report = analyze_patient(&knowledge, &config, &empty, None).expect("empty record is fine");
    println!(
        "patient {}: {} comments, statistics {:?}",
        report.patient_id,
        report.comments.len(),
        report.statistics
    );

    banner("9. probe: unknown keys in the engine config are rejected");
    match serde_json::from_str::<EngineConfig>(r#"{"acceptance_threshold": 0.6, "typo_key": 1}"#) {
        Ok(_) => println!("unexpectedly accepted"),
        Err(e) => println!("rejected: {e}"),
    }
}

fn banner(title: &str) {
    println!("\n==== {title} ====");
}
