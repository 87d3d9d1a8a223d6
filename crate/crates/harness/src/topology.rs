//! Declarative topology documents.
//!
//! ```toml
//! [[institutions]]
//! name = "ES"
//! base_port = 7100        # 0 picks free ports
//! data_dir = "data/es"
//!
//! [[patients]]
//! patient_id = "paula"
//! home_institution = "ES"
//! extra_validator_count = 0
//! ```
//!
//! Ports of an institution: `base` resources API, `base+1` main-chain node,
//! `base+2` connector gateway, `base+10..` patient-chain nodes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const RESOURCES_OFFSET: u16 = 0;
pub const MAIN_NODE_OFFSET: u16 = 1;
pub const GATEWAY_OFFSET: u16 = 2;
pub const PATIENT_NODE_OFFSET: u16 = 10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstitutionSpec {
    pub name: String,
    #[serde(default)]
    pub base_port: u16,
    pub data_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientSpec {
    pub patient_id: String,
    pub home_institution: String,
    #[serde(default)]
    pub extra_validator_count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub institutions: Vec<InstitutionSpec>,
    #[serde(default)]
    pub patients: Vec<PatientSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpecError {
    #[error("cannot read {path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("malformed topology: {0}")]
    Parse(String),
    #[error("topology has no institutions")]
    Empty,
    #[error("duplicate institution name {0}")]
    DuplicateInstitution(String),
    #[error("duplicate patient id {0}")]
    DuplicatePatient(String),
    #[error("port {port} used by both {first} and {second}")]
    DuplicatePort { port: u16, first: String, second: String },
    #[error("patient {patient} names unknown home institution {institution}")]
    UnknownInstitution { patient: String, institution: String },
    #[error("invalid name {0:?}")]
    BadName(String),
    #[error("port range of {0} overflows")]
    PortOverflow(String),
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl TopologySpec {
    /// ES and CN, with Paula homed at ES; data under `root`.
    pub fn paula(root: &Path) -> Self {
        TopologySpec {
            institutions: ["ES", "CN"]
                .iter()
                .map(|name| InstitutionSpec {
                    name: name.to_string(),
                    base_port: 0,
                    data_dir: root.join(name.to_lowercase()),
                })
                .collect(),
            patients: vec![PatientSpec {
                patient_id: "paula".into(),
                home_institution: "ES".into(),
                extra_validator_count: 0,
            }],
        }
    }

    pub fn parse(text: &str) -> Result<Self, SpecError> {
        let spec: TopologySpec = toml::from_str(text).map_err(|e| SpecError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Loads a document; relative data dirs resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, SpecError> {
        let text = std::fs::read_to_string(path).map_err(|e| SpecError::Read {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut spec = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for inst in &mut spec.institutions {
            if inst.data_dir.is_relative() {
                inst.data_dir = base.join(&inst.data_dir);
            }
        }
        Ok(spec)
    }

    pub fn institution(&self, name: &str) -> Option<&InstitutionSpec> {
        self.institutions.iter().find(|i| i.name == name)
    }

    /// Fixed ports each institution claims; base port 0 claims none.
    fn claimed_ports(&self) -> Result<Vec<(u16, String)>, SpecError> {
        let mut homed: BTreeMap<&str, usize> = BTreeMap::new();
        for p in &self.patients {
            *homed.entry(p.home_institution.as_str()).or_default() += 1 + p.extra_validator_count;
        }
        let mut out = Vec::new();
        for inst in self.institutions.iter().filter(|i| i.base_port != 0) {
            let overflow = || SpecError::PortOverflow(inst.name.clone());
            let mut offsets = vec![RESOURCES_OFFSET, MAIN_NODE_OFFSET, GATEWAY_OFFSET];
            let patient_nodes = *homed.get(inst.name.as_str()).unwrap_or(&0);
            for k in 0..patient_nodes {
                offsets.push(PATIENT_NODE_OFFSET.checked_add(u16::try_from(k).map_err(|_| overflow())?).ok_or_else(overflow)?);
            }
            for off in offsets {
                let port = inst.base_port.checked_add(off).ok_or_else(overflow)?;
                out.push((port, inst.name.clone()));
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.institutions.is_empty() {
            return Err(SpecError::Empty);
        }
        let mut names = BTreeSet::new();
        for inst in &self.institutions {
            if !valid_name(&inst.name) {
                return Err(SpecError::BadName(inst.name.clone()));
            }
            if !names.insert(inst.name.as_str()) {
                return Err(SpecError::DuplicateInstitution(inst.name.clone()));
            }
        }
        let mut pids = BTreeSet::new();
        for p in &self.patients {
            if !valid_name(&p.patient_id) {
                return Err(SpecError::BadName(p.patient_id.clone()));
            }
            if !pids.insert(p.patient_id.as_str()) {
                return Err(SpecError::DuplicatePatient(p.patient_id.clone()));
            }
            if !names.contains(p.home_institution.as_str()) {
                return Err(SpecError::UnknownInstitution {
                    patient: p.patient_id.clone(),
                    institution: p.home_institution.clone(),
                });
            }
        }
        let mut owners: BTreeMap<u16, String> = BTreeMap::new();
        for (port, owner) in self.claimed_ports()? {
            if let Some(first) = owners.insert(port, owner.clone()) {
                return Err(SpecError::DuplicatePort {
                    port,
                    first,
                    second: owner,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = r#"
        [[institutions]]
        name = "ES"
        base_port = 7100
        data_dir = "es"

        [[institutions]]
        name = "CN"
        base_port = 7200
        data_dir = "cn"

        [[patients]]
        patient_id = "paula"
        home_institution = "ES"
    "#;

    #[test]
    fn parses_two_institutions() {
        let spec = TopologySpec::parse(TWO).unwrap();
        assert_eq!(spec.institutions.len(), 2);
        assert_eq!(spec.patients[0].extra_validator_count, 0);
    }

    #[test]
    fn overlapping_ports_rejected() {
        let text = TWO.replace("7200", "7102");
        assert!(matches!(TopologySpec::parse(&text), Err(SpecError::DuplicatePort { port: 7102, .. })));
        // ES's first patient node sits at 7110.
        let text = TWO.replace("7200", "7110");
        assert!(matches!(TopologySpec::parse(&text), Err(SpecError::DuplicatePort { port: 7110, .. })));
    }

    #[test]
    fn unknown_home_rejected() {
        let text = TWO.replace("home_institution = \"ES\"", "home_institution = \"FR\"");
        assert!(matches!(TopologySpec::parse(&text), Err(SpecError::UnknownInstitution { .. })));
    }

    #[test]
    fn duplicates_rejected() {
        let text = TWO.replace("name = \"CN\"", "name = \"ES\"");
        assert!(matches!(TopologySpec::parse(&text), Err(SpecError::DuplicateInstitution(_))));
        let text = format!("{TWO}\n[[patients]]\npatient_id = \"paula\"\nhome_institution = \"CN\"\n");
        assert!(matches!(TopologySpec::parse(&text), Err(SpecError::DuplicatePatient(_))));
        assert!(matches!(TopologySpec::parse("institutions = []"), Err(SpecError::Empty)));
    }

    #[test]
    fn ephemeral_ports_never_clash() {
        let spec = TopologySpec::paula(Path::new("/tmp/x"));
        assert!(spec.validate().is_ok());
    }
}
