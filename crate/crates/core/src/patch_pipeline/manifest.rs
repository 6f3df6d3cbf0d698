use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{classify_patch, Label, PatchRecord, Split, ThresholdConfig};
use crate::error::{invalid, Error, Result};
use crate::translator::Domain;

pub const MANIFEST_HEADER: [&str; 10] = [
    "patch_id",
    "slide_id",
    "row",
    "col",
    "size",
    "tissue_coverage",
    "lesion_coverage",
    "label",
    "domain",
    "split",
];

/// Settings that produced a manifest, stored in a JSON sidecar.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifestMeta {
    /// `preprocess` or `synth`.
    pub source: String,
    pub patch_size: Option<usize>,
    pub thresholds: ThresholdConfig,
    pub seed: Option<u64>,
    pub split_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub records: Vec<PatchRecord>,
    pub meta: ManifestMeta,
}

/// Round a coverage to the 6 decimals kept on disk.
pub fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

impl Manifest {
    /// Validates id uniqueness, label/threshold consistency and domain rules.
    pub fn new(records: Vec<PatchRecord>, meta: ManifestMeta) -> Result<Self> {
        let m = Manifest { records, meta };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.patch_id.as_str()) {
                return Err(invalid!("duplicate patch_id {}", r.patch_id));
            }
            let expected = classify_patch(r.tissue_coverage, r.lesion_coverage, &self.meta.thresholds)?;
            if expected != r.label {
                return Err(invalid!(
                    "{}: label {} disagrees with coverages ({}, {}) -> {}",
                    r.patch_id,
                    r.label,
                    r.tissue_coverage,
                    r.lesion_coverage,
                    expected
                ));
            }
            if r.domain.is_some() && (r.label != Label::Healthy || r.split != Split::Train) {
                return Err(invalid!(
                    "{}: only healthy training patches may carry a domain",
                    r.patch_id
                ));
            }
        }
        Ok(())
    }

    pub fn meta_path(manifest: &Path) -> PathBuf {
        manifest.with_extension("meta.json")
    }

    /// Directory holding `<patch_id>.png` files.
    pub fn patch_dir(manifest: &Path) -> PathBuf {
        manifest
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    }

    pub fn patch_path(manifest: &Path, rec: &PatchRecord) -> PathBuf {
        Self::patch_dir(manifest).join(format!("{}.png", rec.patch_id))
    }

    pub fn has_domains(&self) -> bool {
        self.records.iter().any(|r| r.domain.is_some())
    }

    pub fn test_records(&self) -> impl Iterator<Item = &PatchRecord> {
        self.records
            .iter()
            .filter(|r| r.split == Split::Test && r.label != Label::Ambiguous)
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = MANIFEST_HEADER.join(",");
        s.push('\n');
        for r in &self.records {
            let domain = r.domain.map_or_else(|| "none".to_string(), |d| d.to_string());
            s.push_str(&format!(
                "{},{},{},{},{},{:.6},{:.6},{},{},{}\n",
                r.patch_id, r.slide_id, r.row, r.col, r.size, r.tissue_coverage, r.lesion_coverage, r.label, domain, r.split
            ));
        }
        s
    }

    /// Writes the CSV and its `.meta.json` sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        for r in &self.records {
            if r.patch_id.contains([',', '"', '\n']) || r.slide_id.contains([',', '"', '\n']) {
                return Err(invalid!("identifier {:?} contains a CSV delimiter", r.patch_id));
            }
        }
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))?;
        let meta_path = Self::meta_path(path);
        let json = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let meta_path = Self::meta_path(path);
        let meta = match fs::read_to_string(&meta_path) {
            Ok(s) => serde_json::from_str(&s).map_err(|e| Error::format(&meta_path, e.to_string()))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::format(path, "missing .meta.json sidecar"));
            }
            Err(e) => return Err(Error::io(&meta_path, e)),
        };
        let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| Error::format(path, e.to_string()))?;
        if header.iter().ne(MANIFEST_HEADER) {
            return Err(Error::format(path, format!("unexpected header {:?}", header)));
        }
        let mut records = Vec::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| Error::format(path, e.to_string()))?;
            let at = |e: Error| Error::format(path, format!("row {}: {e}", line + 2));
            let num = |i: usize| -> Result<usize> {
                row[i].parse().map_err(|_| invalid!("bad {} {:?}", MANIFEST_HEADER[i], &row[i]))
            };
            let frac = |i: usize| -> Result<f64> {
                row[i].parse().map_err(|_| invalid!("bad {} {:?}", MANIFEST_HEADER[i], &row[i]))
            };
            let parse = || -> Result<PatchRecord> {
                Ok(PatchRecord {
                    patch_id: row[0].to_string(),
                    slide_id: row[1].to_string(),
                    row: num(2)?,
                    col: num(3)?,
                    size: num(4)?,
                    tissue_coverage: frac(5)?,
                    lesion_coverage: frac(6)?,
                    label: row[7].parse()?,
                    domain: match &row[8] {
                        "none" => None,
                        d => Some(d.parse::<Domain>()?),
                    },
                    split: row[9].parse()?,
                })
            };
            records.push(parse().map_err(at)?);
        }
        Manifest::new(records, meta).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, label: Label, lesion: f64, domain: Option<Domain>) -> PatchRecord {
        PatchRecord {
            patch_id: id.into(),
            slide_id: "s1".into(),
            row: 0,
            col: 512,
            size: 512,
            tissue_coverage: 0.987654,
            lesion_coverage: lesion,
            label,
            domain,
            split: Split::Train,
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        let m = Manifest::new(
            vec![
                rec("a", Label::Healthy, 0.0, Some(Domain::X)),
                rec("b", Label::Anomalous, 0.95, None),
            ],
            ManifestMeta {
                source: "preprocess".into(),
                patch_size: Some(512),
                seed: Some(7),
                ..ManifestMeta::default()
            },
        )
        .unwrap();
        m.write(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("patch_id,slide_id,row,col,size,tissue_coverage,lesion_coverage,label,domain,split\n"));
        assert!(text.contains("a,s1,0,512,512,0.987654,0.000000,healthy,X,train"));
        assert_eq!(Manifest::read(&path).unwrap(), m);
        assert_eq!(Manifest::patch_path(&path, &m.records[0]), dir.path().join("a.png"));
    }

    #[test]
    fn rejects_inconsistent_records() {
        let meta = ManifestMeta::default();
        assert!(Manifest::new(vec![rec("a", Label::Anomalous, 0.0, None)], meta.clone()).is_err());
        assert!(Manifest::new(vec![rec("a", Label::Anomalous, 0.95, Some(Domain::Y))], meta.clone()).is_err());
        let dup = vec![rec("a", Label::Healthy, 0.0, None), rec("a", Label::Healthy, 0.0, None)];
        assert!(Manifest::new(dup, meta).is_err());
    }

    #[test]
    fn missing_sidecar_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, MANIFEST_HEADER.join(",") + "\n").unwrap();
        assert!(matches!(Manifest::read(&path), Err(Error::Format { .. })));
    }
}
