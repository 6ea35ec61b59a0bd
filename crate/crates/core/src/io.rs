//! Scan files.
//!
//! CSV layout: optional `# key = <json>` metadata lines, then a header with
//! `tau_s,xi_rad,phi_rad,shots,d_counts` (plus `arm` for paired scans) and
//! one row per analysis phase. `xi_rad` is `NA` for free-running scans.
//! Rows of one fringe are contiguous; cells appear in τ-major order.
//!
//! JSON files hold the full [`ScanResult`] under a small envelope.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::FitResult;
use crate::lockin::{LockInSequence, XiMode};
use crate::measure::{FringeMetadata, FringeRecord, ScanCell, ScanKind, ScanResult};

pub const FORMAT_NAME: &str = "ionlock-scan";
pub const FORMAT_VERSION: u32 = 1;

const REQUIRED_COLUMNS: [&str; 5] = ["tau_s", "xi_rad", "phi_rad", "shots", "d_counts"];
const NA: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Arm {
    Force,
    Reference,
}

impl Arm {
    fn label(self) -> &'static str {
        match self {
            Arm::Force => "force",
            Arm::Reference => "reference",
        }
    }

    fn parse(s: &str) -> Option<Arm> {
        match s {
            "force" => Some(Arm::Force),
            "reference" => Some(Arm::Reference),
            _ => None,
        }
    }
}

fn records_of(scan: &ScanResult) -> impl Iterator<Item = (usize, &ScanCell, Arm, &FringeRecord)> {
    scan.cells.iter().enumerate().flat_map(|(i, c)| {
        std::iter::once((i, c, Arm::Force, &c.record))
            .chain(c.reference.iter().map(move |r| (i, c, Arm::Reference, r)))
    })
}

/// Writes a scan as CSV. Metadata shared by every record of an arm is
/// written once; anything else per record.
pub fn write_scan_csv<W: Write>(scan: &ScanResult, mut out: W) -> Result<()> {
    scan.validate()?;
    let kind = serde_json::to_string(&scan.kind)?;
    writeln!(out, "# format = \"{FORMAT_NAME}\"")?;
    writeln!(out, "# version = {FORMAT_VERSION}")?;
    writeln!(out, "# kind = {kind}")?;
    writeln!(out, "# pulse_count = {}", scan.pulse_count)?;
    writeln!(out, "# paired = {}", scan.paired)?;
    for arm in [Arm::Force, Arm::Reference] {
        let metas: Vec<(usize, &FringeMetadata)> = records_of(scan)
            .filter(|r| r.2 == arm)
            .map(|(i, _, _, r)| (i, &r.metadata))
            .collect();
        let Some(&(_, first)) = metas.first() else {
            continue;
        };
        if metas.iter().all(|(_, m)| *m == first) {
            writeln!(
                out,
                "# metadata.{} = {}",
                arm.label(),
                serde_json::to_string(first)?
            )?;
        } else {
            for (i, m) in metas {
                writeln!(
                    out,
                    "# metadata.{}.{i} = {}",
                    arm.label(),
                    serde_json::to_string(m)?
                )?;
            }
        }
    }

    let mut w = csv::Writer::from_writer(out);
    let mut header = REQUIRED_COLUMNS.to_vec();
    if scan.paired {
        header.push("arm");
    }
    w.write_record(&header)?;
    for (_, cell, arm, rec) in records_of(scan) {
        let xi = cell.xi.map_or_else(|| NA.to_string(), format_f64);
        for (phi, d) in rec.phases.iter().zip(&rec.d_counts) {
            let mut row = vec![
                format_f64(cell.tau),
                xi.clone(),
                format_f64(*phi),
                rec.shots_per_phase.to_string(),
                d.to_string(),
            ];
            if scan.paired {
                row.push(arm.label().to_string());
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Header metadata recovered from `# key = value` lines.
#[derive(Debug, Default)]
struct CsvMetadata {
    entries: BTreeMap<String, (usize, String)>,
}

impl CsvMetadata {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let Some(body) = line.trim_start().strip_prefix('#') else {
                continue;
            };
            let body = body.trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                // Free-form comment.
                continue;
            };
            entries.insert(key.trim().to_string(), (idx + 1, value.trim().to_string()));
        }
        Ok(CsvMetadata { entries })
    }

    fn get<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => serde_json::from_str(v)
                .map(Some)
                .map_err(|e| Error::Schema(format!("line {line}: metadata `{key}`: {e}"))),
        }
    }
}

struct Group {
    tau: f64,
    xi: Option<f64>,
    arm: Arm,
    first_row: u64,
    shots: u32,
    phases: Vec<f64>,
    d_counts: Vec<u32>,
}

/// Reads a CSV scan. `pulse_count` overrides (or supplies) the header value,
/// which external files may omit.
pub fn read_scan_csv<R: Read>(mut input: R, pulse_count: Option<u32>) -> Result<ScanResult> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let meta = CsvMetadata::parse(&text)?;
    if let Some(format) = meta.get::<String>("format")? {
        if format != FORMAT_NAME {
            return Err(Error::Schema(format!("unknown format `{format}`")));
        }
    }
    if let Some(v) = meta.get::<u32>("version")? {
        if v > FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "format version {v} is newer than {FORMAT_VERSION}"
            )));
        }
    }
    let pulse_count =
        match pulse_count.or(meta.get("pulse_count")?) {
            Some(n) => n,
            None => return Err(Error::Schema(
                "missing metadata `pulse_count` (add `# pulse_count = N` or pass it explicitly)"
                    .to_string(),
            )),
        };

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let column: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let missing: Vec<&str> = REQUIRED_COLUMNS
        .iter()
        .copied()
        .filter(|c| !column.contains_key(c))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "missing column(s): {}",
            missing.join(", ")
        )));
    }
    let unknown: Vec<&str> = headers
        .iter()
        .filter(|h| !REQUIRED_COLUMNS.contains(h) && *h != "arm")
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Schema(format!(
            "unknown column(s): {}",
            unknown.join(", ")
        )));
    }
    let arm_col = column.get("arm").copied();

    let mut groups: Vec<Group> = Vec::new();
    let mut index: HashMap<(u64, Option<u64>, Arm), usize> = HashMap::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |name: &str| row.get(column[name]).unwrap_or("");
        let bad =
            |name: &str, why: String| Error::Schema(format!("row {line}: column `{name}`: {why}"));
        let num = |name: &str| -> Result<f64> {
            let s = field(name);
            let v: f64 = s
                .parse()
                .map_err(|_| bad(name, format!("`{s}` is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(name, "must be finite".to_string()))
            }
        };
        let int = |name: &str| -> Result<u32> {
            let s = field(name);
            s.parse()
                .map_err(|_| bad(name, format!("`{s}` is not a non-negative integer")))
        };
        let tau = num("tau_s")?;
        let xi = if field("xi_rad").eq_ignore_ascii_case(NA) || field("xi_rad").is_empty() {
            None
        } else {
            Some(num("xi_rad")?)
        };
        let phi = num("phi_rad")?;
        let shots = int("shots")?;
        let d = int("d_counts")?;
        if d > shots {
            return Err(bad("d_counts", format!("{d} exceeds shots {shots}")));
        }
        let arm = match arm_col {
            None => Arm::Force,
            Some(c) => {
                let s = row.get(c).unwrap_or("");
                Arm::parse(s)
                    .ok_or_else(|| bad("arm", format!("`{s}` is neither force nor reference")))?
            }
        };
        let key = (tau.to_bits(), xi.map(f64::to_bits), arm);
        let g = match index.get(&key) {
            Some(&g) => &mut groups[g],
            None => {
                index.insert(key, groups.len());
                groups.push(Group {
                    tau,
                    xi,
                    arm,
                    first_row: line,
                    shots,
                    phases: Vec::new(),
                    d_counts: Vec::new(),
                });
                groups.last_mut().expect("just pushed")
            }
        };
        if g.shots != shots {
            return Err(bad(
                "shots",
                format!(
                    "{shots} differs from {} earlier in this fringe (row {})",
                    g.shots, g.first_row
                ),
            ));
        }
        g.phases.push(phi);
        g.d_counts.push(d);
    }
    if groups.is_empty() {
        return Err(Error::Schema("no data rows".to_string()));
    }

    let synchronous = groups.iter().any(|g| g.xi.is_some());
    if synchronous && groups.iter().any(|g| g.xi.is_none()) {
        return Err(Error::Schema(
            "column `xi_rad` mixes values and NA".to_string(),
        ));
    }
    let kind = meta.get::<ScanKind>("kind")?.unwrap_or(if synchronous {
        ScanKind::Synchronous
    } else {
        ScanKind::Asynchronous
    });
    if (kind == ScanKind::Synchronous) != synchronous {
        return Err(Error::Schema(format!(
            "declared kind {kind:?} disagrees with column `xi_rad`"
        )));
    }
    let paired = groups.iter().any(|g| g.arm == Arm::Reference);
    if let Some(declared) = meta.get::<bool>("paired")? {
        if declared != paired {
            return Err(Error::Schema(format!(
                "declared paired = {declared} but the data {} reference rows",
                if paired { "contain" } else { "lack" }
            )));
        }
    }

    let mut tau_grid: Vec<f64> = groups.iter().map(|g| g.tau).collect();
    tau_grid.sort_by(f64::total_cmp);
    tau_grid.dedup();
    let xi_grid = synchronous.then(|| {
        let mut xs: Vec<f64> = groups.iter().filter_map(|g| g.xi).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs
    });
    let xi_axis: Vec<Option<f64>> = match &xi_grid {
        Some(xs) => xs.iter().map(|&x| Some(x)).collect(),
        None => vec![None],
    };

    let shared: HashMap<Arm, FringeMetadata> = [Arm::Force, Arm::Reference]
        .into_iter()
        .filter_map(|arm| {
            meta.get::<FringeMetadata>(&format!("metadata.{}", arm.label()))
                .transpose()
                .map(|m| m.map(|m| (arm, m)))
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::with_capacity(tau_grid.len() * xi_axis.len());
    for &tau in &tau_grid {
        for &xi in &xi_axis {
            let i = cells.len();
            let mut take = |arm: Arm| -> Result<Option<FringeRecord>> {
                let Some(&g) = index.get(&(tau.to_bits(), xi.map(f64::to_bits), arm)) else {
                    return Ok(None);
                };
                let g = &mut groups[g];
                let metadata =
                    match meta.get::<FringeMetadata>(&format!("metadata.{}.{i}", arm.label()))? {
                        Some(m) => m,
                        None => shared
                            .get(&arm)
                            .cloned()
                            .unwrap_or_else(FringeMetadata::ingested),
                    };
                let xi_mode = xi.map_or(XiMode::UniformRandom, XiMode::Fixed);
                let record = FringeRecord {
                    sequence: LockInSequence::new(tau, pulse_count, xi_mode)?,
                    phases: std::mem::take(&mut g.phases),
                    shots_per_phase: g.shots,
                    d_counts: std::mem::take(&mut g.d_counts),
                    metadata,
                };
                record.validate().map_err(|e| {
                    Error::Schema(format!("fringe starting at row {}: {e}", g.first_row))
                })?;
                Ok(Some(record))
            };
            let where_ = || match xi {
                Some(x) => format!("τ = {tau}, ξ = {x}"),
                None => format!("τ = {tau}"),
            };
            let record = take(Arm::Force)?
                .ok_or_else(|| Error::Schema(format!("no force-arm rows for {}", where_())))?;
            let reference = take(Arm::Reference)?;
            if paired && reference.is_none() {
                return Err(Error::Schema(format!(
                    "no reference-arm rows for {}",
                    where_()
                )));
            }
            cells.push(ScanCell {
                tau,
                xi,
                record,
                reference,
            });
        }
    }

    let scan = ScanResult {
        kind,
        pulse_count,
        tau_grid,
        xi_grid,
        paired,
        cells,
    };
    scan.validate().map_err(|e| Error::Schema(e.to_string()))?;
    Ok(scan)
}

#[derive(Serialize, Deserialize)]
struct ScanEnvelope<S> {
    format: String,
    version: u32,
    scan: S,
}

pub fn write_scan_json<W: Write>(scan: &ScanResult, out: W) -> Result<()> {
    scan.validate()?;
    let env = ScanEnvelope {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        scan,
    };
    serde_json::to_writer_pretty(out, &env)?;
    Ok(())
}

pub fn read_scan_json<R: Read>(input: R) -> Result<ScanResult> {
    let env: ScanEnvelope<ScanResult> =
        serde_json::from_reader(input).map_err(|e| Error::Schema(format!("JSON scan: {e}")))?;
    if env.format != FORMAT_NAME {
        return Err(Error::Schema(format!("unknown format `{}`", env.format)));
    }
    if env.version > FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "format version {} is newer than {FORMAT_VERSION}",
            env.version
        )));
    }
    env.scan
        .validate()
        .map_err(|e| Error::Schema(e.to_string()))?;
    Ok(env.scan)
}

/// Shortest text that parses back to the same `f64`, in exponent form for
/// very small or large magnitudes.
pub fn format_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Flat `parameter,value,lower,upper` table of a fit.
pub fn write_fit_csv<W: Write>(fit: &FitResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["parameter", "value", "lower", "upper"])?;
    for p in &fit.parameters {
        w.write_record([
            p.name.clone(),
            format_f64(p.value),
            format_f64(p.lower),
            format_f64(p.upper),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{
        phase_grid, run_async_scan, run_sync_scan, NoiseModel, ScanSettings, Truth,
    };

    fn settings() -> ScanSettings {
        ScanSettings {
            pulse_count: 4,
            phases: phase_grid(5),
            shots_per_phase: 30,
            truth: Truth {
                frequency: 1013.0,
                amplitude: 0.6,
                xi_offset: 0.1,
            },
            noise: NoiseModel::ideal(3),
        }
    }

    #[test]
    fn csv_round_trip_sync() {
        let scan = run_sync_scan(&[1e-4, 1.7e-4], &[0.0, 0.3, 2.9], &settings()).unwrap();
        let mut buf = Vec::new();
        write_scan_csv(&scan, &mut buf).unwrap();
        assert_eq!(read_scan_csv(buf.as_slice(), None).unwrap(), scan);
    }

    #[test]
    fn csv_round_trip_paired_async() {
        let scan = run_async_scan(&[1e-4, 1.7e-4, 2.2e-4], &settings(), true).unwrap();
        let mut buf = Vec::new();
        write_scan_csv(&scan, &mut buf).unwrap();
        assert_eq!(read_scan_csv(buf.as_slice(), None).unwrap(), scan);
    }

    #[test]
    fn json_round_trip() {
        let scan = run_async_scan(&[1e-4, 2e-4], &settings(), false).unwrap();
        let mut buf = Vec::new();
        write_scan_json(&scan, &mut buf).unwrap();
        assert_eq!(read_scan_json(buf.as_slice()).unwrap(), scan);
    }

    #[test]
    fn missing_columns_are_named() {
        let text = "# pulse_count = 3\ntau_s,phi_rad,shots\n1e-4,0,10\n";
        let err = read_scan_csv(text.as_bytes(), None)
            .unwrap_err()
            .to_string();
        assert!(err.contains("xi_rad") && err.contains("d_counts"), "{err}");
    }

    #[test]
    fn bad_rows_report_line() {
        let text = "# pulse_count = 3\ntau_s,xi_rad,phi_rad,shots,d_counts\n1e-4,NA,0,10,4\n1e-4,NA,x,10,4\n";
        let err = read_scan_csv(text.as_bytes(), None)
            .unwrap_err()
            .to_string();
        assert!(err.contains("row 4") && err.contains("phi_rad"), "{err}");
        let text = "# pulse_count = 3\ntau_s,xi_rad,phi_rad,shots,d_counts\n1e-4,NA,0,10,11\n";
        let err = read_scan_csv(text.as_bytes(), None)
            .unwrap_err()
            .to_string();
        assert!(err.contains("row 3") && err.contains("exceeds"), "{err}");
    }

    #[test]
    fn pulse_count_required() {
        let text = "tau_s,xi_rad,phi_rad,shots,d_counts\n1e-4,NA,0,10,4\n";
        let err = read_scan_csv(text.as_bytes(), None)
            .unwrap_err()
            .to_string();
        assert!(err.contains("pulse_count"), "{err}");
    }
}
