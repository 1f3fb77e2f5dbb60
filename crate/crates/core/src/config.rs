//! Experiment configuration, read from TOML.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::adversary::{AttackSpec, ServerTamperSpec};
use crate::client::{validate_dp, IntegrityPolicy, OutputMode, RainParams};
use crate::error::{Error, Result};
use crate::mpc::check_headroom;
use crate::plaintext::ReferenceSource;
use crate::ring::{Modulus, MERSENNE_61};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    #[default]
    Plaintext,
    Mpc,
}

impl fmt::Display for ExecMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExecMode::Plaintext => "plaintext",
            ExecMode::Mpc => "mpc",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    #[default]
    Rain,
    Mean,
    CoordMedian,
    MajoritySign,
}

/// Noise standard deviation: a number, or `"auto"` for 1% above the bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SigmaSetting {
    Auto,
    Value(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SigmaRepr {
    Num(f64),
    Text(String),
}

impl Serialize for SigmaSetting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SigmaSetting::Auto => SigmaRepr::Text("auto".into()),
            SigmaSetting::Value(v) => SigmaRepr::Num(*v),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SigmaSetting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match SigmaRepr::deserialize(d)? {
            SigmaRepr::Num(v) => Ok(SigmaSetting::Value(v)),
            SigmaRepr::Text(t) if t == "auto" => Ok(SigmaSetting::Auto),
            SigmaRepr::Text(t) => Err(serde::de::Error::custom(format!(
                "sigma must be a number or \"auto\", got {t:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RainSection {
    pub epsilon: f64,
    #[serde(default)]
    pub delta: f64,
    pub sigma: SigmaSetting,
    pub clip: f64,
    /// Defaults to `2 * clip`.
    #[serde(default)]
    pub sensitivity: Option<f64>,
    pub lambda_mad: f64,
    #[serde(default = "default_modulus")]
    pub modulus: u64,
    #[serde(default)]
    pub output_mode: OutputMode,
    #[serde(default)]
    pub integrity: IntegrityPolicy,
    #[serde(default = "default_reference")]
    pub reference: ReferenceSource,
}

fn default_modulus() -> u64 {
    MERSENNE_61
}

fn default_reference() -> ReferenceSource {
    ReferenceSource::RootData
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub d_feat: usize,
    pub classes: usize,
    pub clients: usize,
    /// Non-IID concentration; `1 / classes` is IID.
    pub q: f64,
    #[serde(default = "default_samples")]
    pub samples_per_client: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default = "default_calibration")]
    pub calibration_size: usize,
    /// Standard deviation of the class means.
    #[serde(default = "default_separation")]
    pub class_separation: f64,
    /// Learning rate; defaults depend on the effective output mode.
    #[serde(default)]
    pub eta: Option<f64>,
    /// Learning rate for the mean and coordinate-median baselines.
    #[serde(default = "default_baseline_eta")]
    pub baseline_eta: f64,
}

fn default_samples() -> usize {
    100
}
fn default_test_size() -> usize {
    2000
}
fn default_calibration() -> usize {
    100
}
fn default_separation() -> f64 {
    1.0
}
fn default_baseline_eta() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TamperEvent {
    pub round: u64,
    #[serde(flatten)]
    pub spec: ServerTamperSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Rho,
    Epsilon,
    K,
    D,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Rho => "rho",
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::K => "K",
            SweepAxis::D => "d",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub rounds: usize,
    #[serde(default)]
    pub mode: ExecMode,
    #[serde(default)]
    pub aggregator: Aggregator,
    /// Exit nonzero when a round aborts under the halt policy.
    #[serde(default)]
    pub abort_is_fatal: bool,
    #[serde(default)]
    pub dump_transcript: bool,
    #[serde(default)]
    pub output_dir: Option<String>,
    pub rain: RainSection,
    pub task: TaskSection,
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default)]
    pub tamper: Vec<TamperEvent>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

impl ExperimentConfig {
    /// A valid starting point: K=50, M=10, d_feat=16, eps=2 with auto sigma,
    /// 200 plaintext rounds, no attack.
    pub fn example() -> Self {
        ExperimentConfig {
            seed: 1,
            rounds: 200,
            mode: ExecMode::Plaintext,
            aggregator: Aggregator::Rain,
            abort_is_fatal: false,
            dump_transcript: false,
            output_dir: None,
            rain: RainSection {
                epsilon: 2.0,
                delta: 0.0,
                sigma: SigmaSetting::Auto,
                clip: 0.05,
                sensitivity: None,
                lambda_mad: 1.0,
                modulus: MERSENNE_61,
                output_mode: OutputMode::Sign,
                integrity: IntegrityPolicy::Halt,
                reference: ReferenceSource::RootData,
            },
            task: TaskSection {
                d_feat: 16,
                classes: 10,
                clients: 50,
                q: 0.5,
                samples_per_client: default_samples(),
                test_size: default_test_size(),
                calibration_size: default_calibration(),
                class_separation: default_separation(),
                eta: None,
                baseline_eta: default_baseline_eta(),
            },
            attack: AttackSpec::default(),
            tamper: Vec::new(),
            sweep: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("config parse error: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    /// Model dimension `classes * (d_feat + 1)`.
    pub fn model_dim(&self) -> usize {
        self.task.classes * (self.task.d_feat + 1)
    }

    /// The aggregate the round produces: the secure path only yields signs.
    pub fn effective_output_mode(&self) -> OutputMode {
        match self.mode {
            ExecMode::Mpc => OutputMode::Sign,
            ExecMode::Plaintext => self.rain.output_mode,
        }
    }

    pub fn eta(&self) -> f64 {
        self.task.eta.unwrap_or(match self.effective_output_mode() {
            OutputMode::Weighted => 0.05,
            OutputMode::Sign => 0.01,
        })
    }

    /// Parameters with `sigma = "auto"` resolved.
    pub fn rain_params(&self) -> Result<RainParams> {
        let r = &self.rain;
        let mut p = RainParams {
            epsilon: r.epsilon,
            delta: r.delta,
            sigma: 1.0,
            clip: r.clip,
            sensitivity: r.sensitivity.unwrap_or(2.0 * r.clip),
            lambda_mad: r.lambda_mad,
            modulus: Modulus::new(r.modulus)?,
            output_mode: self.effective_output_mode(),
            integrity: r.integrity,
        };
        p.sigma = match r.sigma {
            SigmaSetting::Value(v) => v,
            SigmaSetting::Auto => validate_dp(&p, p.clip).bound() * 1.01,
        };
        Ok(p)
    }

    /// Whole-config validation, run before any round.
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidParameter("rounds must be >= 1".into()));
        }
        let t = &self.task;
        if t.classes < 2 || t.d_feat == 0 || t.clients == 0 {
            return Err(Error::InvalidParameter(format!(
                "task needs classes >= 2, d_feat >= 1 and clients >= 1, got classes={}, d_feat={}, clients={}",
                t.classes, t.d_feat, t.clients
            )));
        }
        if t.samples_per_client == 0 || t.test_size == 0 || t.calibration_size == 0 {
            return Err(Error::InvalidParameter("sample counts must be >= 1".into()));
        }
        let q_min = 1.0 / t.classes as f64;
        if !(t.q >= q_min - 1e-12 && t.q <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "q must be in [1/classes, 1] = [{q_min}, 1], got {}",
                t.q
            )));
        }
        if let Some(eta) = t.eta {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(Error::InvalidParameter(format!("eta must be > 0, got {eta}")));
            }
        }
        if !(t.baseline_eta.is_finite() && t.baseline_eta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "baseline_eta must be > 0, got {}",
                t.baseline_eta
            )));
        }
        if !(t.class_separation.is_finite() && t.class_separation > 0.0) {
            return Err(Error::InvalidParameter("class_separation must be > 0".into()));
        }
        if self.mode == ExecMode::Mpc && self.aggregator != Aggregator::Rain {
            return Err(Error::InvalidParameter(
                "baseline aggregators run in plaintext mode only".into(),
            ));
        }
        let params = self.rain_params()?;
        params.validate()?;
        let report = validate_dp(&params, params.clip);
        if !report.is_ok() {
            return Err(Error::InvalidParameter(report.to_string()));
        }
        check_headroom(params.modulus, t.clients, self.model_dim())?;
        self.attack.validate(t.classes)?;
        for ev in &self.tamper {
            if ev.spec.party > 1 {
                return Err(Error::InvalidParameter(format!(
                    "tamper party must be 0 or 1, got {}",
                    ev.spec.party
                )));
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::InvalidParameter("sweep needs at least one value".into()));
            }
        }
        Ok(())
    }

    /// A copy with one sweep axis set to `value`.
    pub fn with_axis(&self, axis: SweepAxis, value: f64) -> Result<Self> {
        let mut c = self.clone();
        let as_count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidParameter(format!(
                    "{axis} sweep value must be a positive integer, got {v}"
                )))
            }
        };
        match axis {
            SweepAxis::Rho => c.attack.malicious_fraction = value,
            SweepAxis::Epsilon => c.rain.epsilon = value,
            SweepAxis::K => c.task.clients = as_count(value)?,
            SweepAxis::D => c.task.d_feat = as_count(value)?,
        }
        c.sweep = None;
        Ok(c)
    }
}
