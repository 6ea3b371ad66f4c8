//! Patient-record ingestion: CSV rows → per-patient item lists.
//!
//! Responsibilities:
//! - map external concept identifiers onto library concepts through a
//!   mapping table (or an identity mapping),
//! - normalize values with the entry's affine unit conversion,
//! - validate each row and account for every input row: a row either becomes
//!   a data item, is skipped with a reason, or is reported unmapped — never
//!   silently dropped,
//! - group items per patient, chronologically sorted with a stable
//!   `(concept id, source row)` tie-break.
//!
//! Expected data columns: `patient_id, external_concept_id, value, unit,
//! dose, valid_start, valid_stop` (`unit`, `dose`, and `valid_stop` may be
//! empty or absent). Mapping columns: `external_id, internal_concept_id,
//! unit_factor, unit_offset`. Demographics columns: `patient_id, key, value`.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge::{ConceptId, ConceptKind, KnowledgeLibrary, ValueDomain};
use crate::time::{parse_timestamp, Time};
use crate::value::Value;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("{file} is missing required column '{column}'")]
    MissingColumn { file: &'static str, column: &'static str },
    #[error("mapping row {row}: {message}")]
    Mapping { row: usize, message: String },
}

// ── Mapping table ───────────────────────────────────────────────────────────

/// One external-to-internal concept mapping with its unit conversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingEntry {
    pub external_id: String,
    pub internal_concept_id: ConceptId,
    /// Multiplicative conversion factor; never zero.
    pub unit_factor: f64,
    /// Additive conversion offset.
    pub unit_offset: f64,
}

impl MappingEntry {
    fn is_identity(&self) -> bool {
        self.unit_factor == 1.0 && self.unit_offset == 0.0
    }
}

/// External-id resolution strategy.
#[derive(Debug, Clone)]
pub enum MappingTable {
    /// Every external id is taken as the internal concept id, unconverted.
    Identity,
    Table(BTreeMap<String, MappingEntry>),
}

impl MappingTable {
    /// Resolve an external id to its mapping entry; `None` means unmapped.
    pub fn resolve(&self, external_id: &str) -> Option<MappingEntry> {
        match self {
            MappingTable::Identity => Some(MappingEntry {
                external_id: external_id.to_string(),
                internal_concept_id: external_id.to_string(),
                unit_factor: 1.0,
                unit_offset: 0.0,
            }),
            MappingTable::Table(map) => map.get(external_id).cloned(),
        }
    }
}

/// Load and validate a mapping table. Every internal id must name a
/// primitive or event concept of the library, external ids must be unique,
/// and unit factors must be non-zero.
pub fn load_mapping(reader: impl Read, lib: &KnowledgeLibrary) -> Result<MappingTable, IngestError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    let col = |name: &'static str| -> Result<usize, IngestError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or(IngestError::MissingColumn { file: "mapping CSV", column: name })
    };
    let c_external = col("external_id")?;
    let c_internal = col("internal_concept_id")?;
    let c_factor = col("unit_factor")?;
    let c_offset = col("unit_offset")?;

    let mut entries = BTreeMap::new();
    for (idx, record) in csv.records().enumerate() {
        let row = idx + 2; // 1-based, after the header line
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        let entry = MappingEntry {
            external_id: field(c_external),
            internal_concept_id: field(c_internal),
            unit_factor: field(c_factor).parse().map_err(|_| IngestError::Mapping {
                row,
                message: "unit_factor is not a number".into(),
            })?,
            unit_offset: field(c_offset).parse().map_err(|_| IngestError::Mapping {
                row,
                message: "unit_offset is not a number".into(),
            })?,
        };
        if entry.external_id.is_empty() {
            return Err(IngestError::Mapping { row, message: "empty external_id".into() });
        }
        if entry.unit_factor == 0.0 || !entry.unit_factor.is_finite() || !entry.unit_offset.is_finite() {
            return Err(IngestError::Mapping {
                row,
                message: "unit_factor must be finite and non-zero, unit_offset finite".into(),
            });
        }
        match lib.concept(&entry.internal_concept_id) {
            None => {
                return Err(IngestError::Mapping {
                    row,
                    message: format!(
                        "internal concept '{}' is not in the library",
                        entry.internal_concept_id
                    ),
                })
            }
            Some(c) if c.kind == ConceptKind::Abstract => {
                return Err(IngestError::Mapping {
                    row,
                    message: format!(
                        "internal concept '{}' is abstract; only primitive/event concepts carry raw data",
                        entry.internal_concept_id
                    ),
                })
            }
            Some(_) => {}
        }
        if entries.insert(entry.external_id.clone(), entry).is_some() {
            return Err(IngestError::Mapping { row, message: "duplicate external_id".into() });
        }
    }
    Ok(MappingTable::Table(entries))
}

/// Apply the entry's affine unit conversion to a raw value. Categorical
/// values pass through identity conversions and reject any other.
pub fn convert_units(raw: &Value, entry: &MappingEntry) -> Result<Value, String> {
    match raw {
        Value::Num(v) => Ok(Value::Num(v * entry.unit_factor + entry.unit_offset)),
        Value::Cat(_) if entry.is_identity() => Ok(raw.clone()),
        Value::Cat(_) => Err("categorical value cannot be unit-converted".into()),
    }
}

// ── Data items and patient records ──────────────────────────────────────────

/// One normalized clinical observation or action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataItem {
    pub patient_id: String,
    pub concept_id: ConceptId,
    /// Primitive (patient state) or event (treatment action).
    pub kind: ConceptKind,
    pub value: Value,
    /// Library unit of the concept (values are normalized at ingest).
    pub unit: Option<String>,
    /// Medication dose, for drug events.
    pub dose: Option<f64>,
    pub valid_start: Time,
    pub valid_stop: Option<Time>,
    /// 1-based CSV row this item came from.
    pub source_row: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub demographics: BTreeMap<String, Value>,
    /// Sorted by `(valid_start, concept_id, source_row)`.
    pub items: Vec<DataItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRow {
    pub row: usize,
    pub reason: String,
}

/// Per-ingest accounting. Every input row lands in exactly one bucket:
/// `rows_in == items_out + skipped.len() + unmapped.len()`.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_in: usize,
    pub items_out: usize,
    pub skipped: Vec<SkippedRow>,
    pub unmapped: Vec<SkippedRow>,
}

impl IngestReport {
    pub fn balances(&self) -> bool {
        self.rows_in == self.items_out + self.skipped.len() + self.unmapped.len()
    }
}

/// Ingest a data CSV into per-patient records (sorted by patient id).
pub fn ingest_patient_records(
    reader: impl Read,
    mapping: &MappingTable,
    lib: &KnowledgeLibrary,
) -> Result<(Vec<PatientRecord>, IngestReport), IngestError> {
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let require = |name: &'static str| -> Result<usize, IngestError> {
        col(name).ok_or(IngestError::MissingColumn { file: "data CSV", column: name })
    };
    let c_patient = require("patient_id")?;
    let c_concept = require("external_concept_id")?;
    let c_value = require("value")?;
    let c_start = require("valid_start")?;
    let c_dose = col("dose");
    let c_stop = col("valid_stop");

    let mut report = IngestReport::default();
    let mut by_patient: BTreeMap<String, Vec<DataItem>> = BTreeMap::new();

    for (idx, record) in csv.records().enumerate() {
        let row = idx + 2; // 1-based, after the header line
        let record = record?;
        report.rows_in += 1;
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let optional = |i: Option<usize>| i.map(field).filter(|s| !s.is_empty());

        let mut skip = |reason: String| {
            report.skipped.push(SkippedRow { row, reason });
        };

        let patient_id = field(c_patient);
        if patient_id.is_empty() {
            skip("missing patient_id".into());
            continue;
        }
        let external_id = field(c_concept);
        if external_id.is_empty() {
            skip("missing external_concept_id".into());
            continue;
        }

        let Some(entry) = mapping.resolve(external_id) else {
            report.unmapped.push(SkippedRow {
                row,
                reason: format!("unmapped external concept id '{external_id}'"),
            });
            continue;
        };
        let Some(concept) = lib
            .concept(&entry.internal_concept_id)
            .filter(|c| c.kind != ConceptKind::Abstract)
        else {
            // Reachable only under identity mapping; explicit tables are
            // validated against the library at load time.
            report.unmapped.push(SkippedRow {
                row,
                reason: format!(
                    "'{external_id}' does not resolve to a primitive/event library concept"
                ),
            });
            continue;
        };

        let raw_value = field(c_value);
        if raw_value.is_empty() {
            skip("missing value".into());
            continue;
        }
        let raw = match concept.value_domain {
            ValueDomain::Numeric => match raw_value.parse::<f64>() {
                Ok(v) if v.is_finite() => Value::Num(v),
                _ => {
                    skip(format!(
                        "value '{raw_value}' is not numeric but concept '{}' is",
                        concept.id
                    ));
                    continue;
                }
            },
            ValueDomain::Categorical => Value::Cat(raw_value.to_string()),
        };
        let value = match convert_units(&raw, &entry) {
            Ok(v) => v,
            Err(reason) => {
                skip(reason);
                continue;
            }
        };

        let valid_start = match parse_timestamp(field(c_start)) {
            Ok(t) => t,
            Err(_) => {
                skip(format!("unparseable valid_start '{}'", field(c_start)));
                continue;
            }
        };
        let valid_stop = match optional(c_stop) {
            None => None,
            Some(raw_stop) => match parse_timestamp(raw_stop) {
                Ok(t) if t >= valid_start => Some(t),
                Ok(_) => {
                    skip("valid_stop is before valid_start".into());
                    continue;
                }
                Err(_) => {
                    skip(format!("unparseable valid_stop '{raw_stop}'"));
                    continue;
                }
            },
        };
        let dose = match optional(c_dose) {
            None => None,
            Some(raw_dose) => match raw_dose.parse::<f64>() {
                Ok(d) if d.is_finite() => Some(d),
                _ => {
                    skip(format!("dose '{raw_dose}' is not a number"));
                    continue;
                }
            },
        };

        report.items_out += 1;
        by_patient.entry(patient_id.to_string()).or_default().push(DataItem {
            patient_id: patient_id.to_string(),
            concept_id: concept.id.clone(),
            kind: concept.kind,
            value,
            unit: concept.unit.clone(),
            dose,
            valid_start,
            valid_stop,
            source_row: row,
        });
    }

    let records = by_patient
        .into_iter()
        .map(|(patient_id, mut items)| {
            items.sort_by(|a, b| {
                (a.valid_start, &a.concept_id, a.source_row)
                    .cmp(&(b.valid_start, &b.concept_id, b.source_row))
            });
            PatientRecord { patient_id, demographics: BTreeMap::new(), items }
        })
        .collect();
    Ok((records, report))
}

/// Load a demographics CSV into per-patient key/value maps. Values that
/// parse as numbers become numeric.
pub fn load_demographics(
    reader: impl Read,
) -> Result<BTreeMap<String, BTreeMap<String, Value>>, IngestError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    let col = |name: &'static str| -> Result<usize, IngestError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or(IngestError::MissingColumn { file: "demographics CSV", column: name })
    };
    let c_patient = col("patient_id")?;
    let c_key = col("key")?;
    let c_value = col("value")?;

    let mut out: BTreeMap<String, BTreeMap<String, Value>> = BTreeMap::new();
    for record in csv.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        let raw = field(c_value);
        let value = match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Value::Num(v),
            _ => Value::Cat(raw),
        };
        out.entry(field(c_patient)).or_default().insert(field(c_key), value);
    }
    Ok(out)
}

/// Attach loaded demographics to their records.
pub fn apply_demographics(
    records: &mut [PatientRecord],
    demographics: &BTreeMap<String, BTreeMap<String, Value>>,
) {
    for record in records {
        if let Some(map) = demographics.get(&record.patient_id) {
            record.demographics = map.clone();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::{Concept, PersistenceSpec};

    fn test_lib() -> KnowledgeLibrary {
        let persistence = Some(PersistenceSpec { good_before_s: 0, good_after_s: 3600 });
        KnowledgeLibrary {
            concepts: vec![
                Concept {
                    id: "glucose".into(),
                    kind: ConceptKind::Primitive,
                    unit: Some("mmol/L".into()),
                    value_domain: ValueDomain::Numeric,
                    persistence,
                    definition: None,
                },
                Concept {
                    id: "insulin".into(),
                    kind: ConceptKind::Event,
                    unit: Some("IU".into()),
                    value_domain: ValueDomain::Numeric,
                    persistence,
                    definition: None,
                },
                Concept {
                    id: "stage".into(),
                    kind: ConceptKind::Primitive,
                    unit: None,
                    value_domain: ValueDomain::Categorical,
                    persistence,
                    definition: None,
                },
            ],
            plans: vec![],
        }
    }

    fn test_mapping(lib: &KnowledgeLibrary) -> MappingTable {
        let csv = "external_id,internal_concept_id,unit_factor,unit_offset\n\
                   LOINC:2345-7,glucose,0.0555,0\n\
                   RX:INS,insulin,1,0\n\
                   LOCAL:STAGE,stage,1,0\n";
        load_mapping(csv.as_bytes(), lib).unwrap()
    }

    const DATA_HEADER: &str = "patient_id,external_concept_id,value,unit,dose,valid_start,valid_stop";

    #[test]
    fn groups_rows_per_patient_and_sorts_items() {
        let lib = test_lib();
        let mapping = test_mapping(&lib);
        // Out of order on purpose; p2's rows interleave with p1's.
        let data = format!(
            "{DATA_HEADER}\n\
             p1,LOINC:2345-7,100,mg/dL,,2024-03-02T08:00:00Z,\n\
             p2,RX:INS,12,IU,12,2024-03-01T09:00:00Z,\n\
             p1,RX:INS,10,IU,10,2024-03-01T09:00:00Z,\n\
             p2,LOINC:2345-7,120,mg/dL,,2024-03-01T08:00:00Z,\n\
             p1,LOINC:2345-7,90,mg/dL,,2024-03-01T08:00:00Z,\n\
             p2,LOINC:2345-7,110,mg/dL,,2024-03-02T08:00:00Z,\n"
        );
        let (records, report) = ingest_patient_records(data.as_bytes(), &mapping, &lib).unwrap();

        assert_eq!(report.rows_in, 6);
        assert_eq!(report.items_out, 6);
        assert!(report.balances());
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].patient_id, "p1");
        assert_eq!(records[1].patient_id, "p2");
        for record in &records {
            assert_eq!(record.items.len(), 3);
            assert!(record
                .items
                .windows(2)
                .all(|w| (w[0].valid_start, &w[0].concept_id, w[0].source_row)
                    <= (w[1].valid_start, &w[1].concept_id, w[1].source_row)));
        }
        // Unit-normalized value and library unit on the item.
        let glucose = &records[0].items[0];
        assert_eq!(glucose.concept_id, "glucose");
        assert!((glucose.value.as_num().unwrap() - 90.0 * 0.0555).abs() < 1e-9);
        assert_eq!(glucose.unit.as_deref(), Some("mmol/L"));
    }

    #[test]
    fn identical_timestamps_tie_break_by_concept_then_row() {
        let lib = test_lib();
        let mapping = test_mapping(&lib);
        let data = format!(
            "{DATA_HEADER}\n\
             p1,RX:INS,10,IU,10,2024-03-01T08:00:00Z,\n\
             p1,LOINC:2345-7,90,mg/dL,,2024-03-01T08:00:00Z,\n\
             p1,RX:INS,11,IU,11,2024-03-01T08:00:00Z,\n"
        );
        let (records, _) = ingest_patient_records(data.as_bytes(), &mapping, &lib).unwrap();
        let ids: Vec<(&str, usize)> = records[0]
            .items
            .iter()
            .map(|i| (i.concept_id.as_str(), i.source_row))
            .collect();
        assert_eq!(ids, vec![("glucose", 3), ("insulin", 2), ("insulin", 4)]);
    }

    #[test]
    fn accounts_for_every_row() {
        let lib = test_lib();
        let mapping = test_mapping(&lib);
        let data = format!(
            "{DATA_HEADER}\n\
             p1,LOINC:2345-7,90,mg/dL,,2024-03-01T08:00:00Z,\n\
             p1,UNKNOWN:1,5,,,2024-03-01T08:00:00Z,\n\
             p1,LOINC:2345-7,high,mg/dL,,2024-03-01T08:00:00Z,\n\
             p1,LOINC:2345-7,90,mg/dL,,yesterday,\n\
             p1,LOINC:2345-7,90,mg/dL,,2024-03-02T08:00:00Z,2024-03-01T08:00:00Z\n\
             p1,RX:INS,10,IU,lots,2024-03-01T08:00:00Z,\n"
        );
        let (records, report) = ingest_patient_records(data.as_bytes(), &mapping, &lib).unwrap();

        assert_eq!(report.rows_in, 6);
        assert_eq!(report.items_out, 1);
        assert_eq!(report.unmapped.len(), 1);
        assert_eq!(report.skipped.len(), 4);
        assert!(report.balances());
        assert_eq!(records[0].items.len(), 1);

        let reasons: Vec<&str> = report.skipped.iter().map(|s| s.reason.as_str()).collect();
        assert!(reasons.iter().any(|r| r.contains("not numeric")));
        assert!(reasons.iter().any(|r| r.contains("valid_start")));
        assert!(reasons.iter().any(|r| r.contains("before valid_start")));
        assert!(reasons.iter().any(|r| r.contains("dose")));
        assert_eq!(report.unmapped[0].row, 3);
    }

    #[test]
    fn categorical_values_keep_their_text() {
        let lib = test_lib();
        let mapping = test_mapping(&lib);
        let data = format!(
            "{DATA_HEADER}\n\
             p1,LOCAL:STAGE,II,,,2024-03-01T08:00:00Z,\n"
        );
        let (records, _) = ingest_patient_records(data.as_bytes(), &mapping, &lib).unwrap();
        assert_eq!(records[0].items[0].value, Value::Cat("II".into()));
    }

    #[test]
    fn identity_mapping_accepts_library_ids_and_reports_others() {
        let lib = test_lib();
        let data = format!(
            "{DATA_HEADER}\n\
             p1,glucose,5.2,mmol/L,,2024-03-01T08:00:00Z,\n\
             p1,made-up,1,,,2024-03-01T08:00:00Z,\n"
        );
        let (records, report) =
            ingest_patient_records(data.as_bytes(), &MappingTable::Identity, &lib).unwrap();
        assert_eq!(records[0].items.len(), 1);
        assert_eq!(report.unmapped.len(), 1);
        assert!(report.balances());
    }

    #[test]
    fn mapping_load_rejects_bad_tables() {
        let lib = test_lib();
        let zero_factor = "external_id,internal_concept_id,unit_factor,unit_offset\n\
                           X,glucose,0,0\n";
        assert!(matches!(
            load_mapping(zero_factor.as_bytes(), &lib),
            Err(IngestError::Mapping { row: 2, .. })
        ));

        let duplicate = "external_id,internal_concept_id,unit_factor,unit_offset\n\
                         X,glucose,1,0\nX,insulin,1,0\n";
        assert!(matches!(
            load_mapping(duplicate.as_bytes(), &lib),
            Err(IngestError::Mapping { row: 3, .. })
        ));

        let unknown = "external_id,internal_concept_id,unit_factor,unit_offset\n\
                       X,ghost,1,0\n";
        assert!(load_mapping(unknown.as_bytes(), &lib).is_err());
    }

    #[test]
    fn demographics_attach_to_records() {
        let lib = test_lib();
        let mapping = test_mapping(&lib);
        let data = format!(
            "{DATA_HEADER}\n\
             p1,LOINC:2345-7,90,mg/dL,,2024-03-01T08:00:00Z,\n"
        );
        let (mut records, _) = ingest_patient_records(data.as_bytes(), &mapping, &lib).unwrap();
        let demo = load_demographics(
            "patient_id,key,value\np1,birth-year,1960\np1,sex,female\n".as_bytes(),
        )
        .unwrap();
        apply_demographics(&mut records, &demo);
        assert_eq!(records[0].demographics["birth-year"], Value::Num(1960.0));
        assert_eq!(records[0].demographics["sex"], Value::Cat("female".into()));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Affine unit conversion round-trips within relative tolerance.
            #[test]
            fn unit_conversion_is_invertible(
                value in -1e6f64..1e6,
                factor in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3],
                offset in -1e6f64..1e6,
            ) {
                let entry = MappingEntry {
                    external_id: "x".into(),
                    internal_concept_id: "x".into(),
                    unit_factor: factor,
                    unit_offset: offset,
                };
                let converted = convert_units(&Value::Num(value), &entry).unwrap();
                let back = (converted.as_num().unwrap() - offset) / factor;
                let tolerance = 1e-9 * value.abs().max(offset.abs()).max(1.0);
                prop_assert!((back - value).abs() <= tolerance);
            }

            /// Row order never changes the ingested records.
            #[test]
            fn ingest_is_order_independent(order in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle()) {
                let lib = test_lib();
                let mapping = test_mapping(&lib);
                let rows = [
                    "p1,LOINC:2345-7,100,mg/dL,,2024-03-02T08:00:00Z,",
                    "p2,RX:INS,12,IU,12,2024-03-01T09:00:00Z,",
                    "p1,RX:INS,10,IU,10,2024-03-01T09:00:00Z,",
                    "p2,LOINC:2345-7,120,mg/dL,,2024-03-01T08:00:00Z,",
                    "p1,LOINC:2345-7,90,mg/dL,,2024-03-01T08:00:00Z,",
                    "p2,LOINC:2345-7,110,mg/dL,,2024-03-02T08:00:00Z,",
                ];
                let baseline = {
                    let data = format!("{DATA_HEADER}\n{}\n", rows.join("\n"));
                    ingest_patient_records(data.as_bytes(), &mapping, &lib).unwrap().0
                };
                let shuffled_rows: Vec<&str> = order.iter().map(|&i| rows[i]).collect();
                let data = format!("{DATA_HEADER}\n{}\n", shuffled_rows.join("\n"));
                let (records, report) = ingest_patient_records(data.as_bytes(), &mapping, &lib).unwrap();
                prop_assert!(report.balances());
                // Items are identical up to provenance row numbers.
                let strip = |records: &[PatientRecord]| -> Vec<Vec<DataItem>> {
                    records
                        .iter()
                        .map(|r| {
                            r.items
                                .iter()
                                .map(|i| DataItem { source_row: 0, ..i.clone() })
                                .collect()
                        })
                        .collect()
                };
                prop_assert_eq!(strip(&records), strip(&baseline));
            }
        }
    }
}
