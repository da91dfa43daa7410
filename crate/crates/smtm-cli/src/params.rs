//! Serializable command parameters. Every run writes its fully resolved
//! parameters as `manifest.json` next to its reports; `smtm replay` executes
//! a manifest verbatim, reproducing the reports byte for byte.

use serde::{Deserialize, Serialize};
use smtm::pipeline::EngineConfig;

pub mod tau_list {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(taus: &[f32], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(taus.len()))?;
        for &tau in taus {
            if tau.is_infinite() {
                seq.serialize_element("inf")?;
            } else {
                seq.serialize_element(&tau)?;
            }
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f32>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f32),
            Text(String),
        }
        let raw = Vec::<Raw>::deserialize(d)?;
        raw.into_iter()
            .map(|r| match r {
                Raw::Num(v) => Ok(v),
                Raw::Text(t) => super::parse_tau(&t).map_err(serde::de::Error::custom),
            })
            .collect()
    }
}

/// Threshold syntax: a non-negative real or the token `inf`.
pub fn parse_tau(text: &str) -> Result<f32, String> {
    if text == "inf" {
        return Ok(f32::INFINITY);
    }
    let v: f32 = text
        .parse()
        .map_err(|_| format!("invalid tau {text:?}: expected a number or \"inf\""))?;
    if v.is_nan() || v < 0.0 {
        return Err(format!("tau must be >= 0, got {text}"));
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenTraceParams {
    pub classes: u32,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zipf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub freqs: Option<Vec<f64>>,
    pub burstiness: f64,
    pub noise: f32,
    pub seed: u64,
    pub template_seed: u64,
    pub template_drift: f32,
    pub round_robin: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenModelParams {
    pub preset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_classes: Option<usize>,
    pub name: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupParams {
    pub model: String,
    pub weights: String,
    pub trace: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_cap: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub model: String,
    pub weights: String,
    pub centers: String,
    pub trace: String,
    pub engine: EngineConfig,
    pub dump_tables: bool,
    pub dump_similarities: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    pub model: String,
    pub weights: String,
    pub centers: String,
    pub trace: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepParams {
    pub model: String,
    pub weights: String,
    pub centers: String,
    pub trace: String,
    pub engine: EngineConfig,
    #[serde(with = "tau_list")]
    pub taus: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateParams {
    pub model: String,
    pub weights: String,
    pub centers: String,
    pub trace: String,
    pub engine: EngineConfig,
}

/// Fully resolved parameters of one CLI invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Params {
    GenTrace(GenTraceParams),
    GenModel(GenModelParams),
    Warmup(WarmupParams),
    Run(RunParams),
    Baseline(BaselineParams),
    Sweep(SweepParams),
    Ablate(AblateParams),
}

impl Params {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("params serialize");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_round_trip_including_inf_tau() {
        let params = Params::Sweep(SweepParams {
            model: "m.json".into(),
            weights: "w.bin".into(),
            centers: "c.bin".into(),
            trace: "t.bin".into(),
            engine: EngineConfig::default(),
            taus: vec![0.1, 0.5, f32::INFINITY],
        });
        let text = params.to_json();
        let back = Params::from_json(&text).unwrap();
        assert_eq!(back, params);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn tau_parsing() {
        assert_eq!(parse_tau("0.5").unwrap(), 0.5);
        assert!(parse_tau("inf").unwrap().is_infinite());
        assert!(parse_tau("-1").is_err());
        assert!(parse_tau("abc").is_err());
    }
}
