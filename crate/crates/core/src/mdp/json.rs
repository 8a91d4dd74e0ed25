//! Instance JSON format.
//!
//! ```json
//! { "horizon": H, "feature_dim": d, "states": [..], "actions": [..],
//!   "phi": [[d floats] x S*A], "nu": [[[d floats] x S] x H],
//!   "theta": [[d floats] x H], "initial_dist": [S floats],
//!   "reward_noise_std": x, "exemptions": {"reward_range": b, "feature_norm": b} }
//! ```
//!
//! `phi` rows are ordered `s * A + a`. Floats are written with 17 significant
//! digits. `exemptions` is optional on input.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{Exemptions, LinearMdp, LinearMdpParts};
use crate::error::Result;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub horizon: usize,
    pub feature_dim: usize,
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub phi: Vec<Vec<f64>>,
    pub nu: Vec<Vec<Vec<f64>>>,
    pub theta: Vec<Vec<f64>>,
    pub initial_dist: Vec<f64>,
    pub reward_noise_std: f64,
    #[serde(default)]
    pub exemptions: Exemptions,
}

impl InstanceFile {
    pub fn into_mdp(self) -> Result<LinearMdp> {
        let vec = |v: Vec<f64>| DVector::from_vec(v);
        LinearMdp::new(LinearMdpParts {
            horizon: self.horizon,
            feature_dim: self.feature_dim,
            states: self.states,
            actions: self.actions,
            phi: self.phi.into_iter().map(vec).collect(),
            nu: self
                .nu
                .into_iter()
                .map(|step| step.into_iter().map(vec).collect())
                .collect(),
            theta: self.theta.into_iter().map(vec).collect(),
            initial_dist: self.initial_dist,
            reward_noise_std: self.reward_noise_std,
            exemptions: self.exemptions,
        })
    }
}

/// 17 significant digits, round-trip exact.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_vec(out: &mut String, v: &[f64]) {
    out.push('[');
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_f64(*x));
    }
    out.push(']');
}

fn write_rows<'a>(out: &mut String, rows: impl Iterator<Item = &'a DVector<f64>>, indent: &str) {
    out.push('[');
    for (i, r) in rows.enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push('\n');
        out.push_str(indent);
        write_vec(out, r.as_slice());
    }
    out.push(']');
}

impl LinearMdp {
    pub fn to_json(&self) -> String {
        let p = self.parts();
        let strings = |v: &[String]| serde_json::to_string(v).expect("strings serialize");
        let mut out = String::new();
        out.push_str("{\n");
        let _ = writeln!(out, "  \"horizon\": {},", p.horizon);
        let _ = writeln!(out, "  \"feature_dim\": {},", p.feature_dim);
        let _ = writeln!(out, "  \"states\": {},", strings(&p.states));
        let _ = writeln!(out, "  \"actions\": {},", strings(&p.actions));
        out.push_str("  \"phi\": ");
        write_rows(&mut out, p.phi.iter(), "    ");
        out.push_str(",\n  \"nu\": [");
        for (h, step) in p.nu.iter().enumerate() {
            if h > 0 {
                out.push(',');
            }
            out.push_str("\n    ");
            write_rows(&mut out, step.iter(), "      ");
        }
        out.push_str("],\n  \"theta\": ");
        write_rows(&mut out, p.theta.iter(), "    ");
        out.push_str(",\n  \"initial_dist\": ");
        write_vec(&mut out, &p.initial_dist);
        let _ = write!(
            out,
            ",\n  \"reward_noise_std\": {},\n  \"exemptions\": {}\n}}\n",
            fmt_f64(p.reward_noise_std),
            serde_json::to_string(&p.exemptions).expect("flags serialize")
        );
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<InstanceFile>(text)?.into_mdp()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}
