//! End-to-end round driver: synthetic softmax-regression task, non-IID
//! partition, client pipeline, plaintext / secure aggregation, metrics.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{
    dpfl_adaptive, krum_attack, label_flip, scaling_attack, select_malicious, server_tamper, trim_attack, AttackKind,
    ServerTamperSpec, TamperRecord,
};
use crate::client::{clip, encode_and_split, sign_gaussian, OutputMode, RainParams, SignUpdate};
use crate::config::{Aggregator, ExecMode, ExperimentConfig};
use crate::error::{Error, Result};
use crate::mac::{check_cardinality, mac_tag, stream_check, tag_share, AbortReport, IntegrityPolicy, TaggedBatch};
use crate::mpc::MpcSession;
use crate::plaintext::{
    baseline_aggregate, cosine_from_hamming, hamming_count, median, model_update, rain_aggregate, BaselineKind,
    RainOutcome, ReferenceDirection, ReferenceSource,
};
use crate::ring::{check_len, dealer_setup, Modulus, Party, Prg, RingElement, Seed, SharedVector};
use crate::shuffle::shuffle_offline;
use crate::transcript::{
    audit_openings, comm_account, CommBreakdown, MessageKind, OpenKind, RoundTranscript, Sender, TranscriptDump,
};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Value written into the trigger features of backdoored inputs.
pub const TRIGGER_VALUE: f64 = 5.0;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

/// Multinomial logistic regression; parameters are `classes` rows of
/// `d_feat` weights followed by a bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Softmax {
    pub d_feat: usize,
    pub classes: usize,
}

impl Softmax {
    pub fn dim(&self) -> usize {
        self.classes * (self.d_feat + 1)
    }

    fn logits(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let stride = self.d_feat + 1;
        (0..self.classes)
            .map(|c| {
                let row = &w[c * stride..(c + 1) * stride];
                row[..self.d_feat].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + row[self.d_feat]
            })
            .collect()
    }

    pub fn predict(&self, w: &[f64], x: &[f64]) -> usize {
        let z = self.logits(w, x);
        let mut best = 0;
        for c in 1..z.len() {
            if z[c] > z[best] {
                best = c;
            }
        }
        best
    }

    /// Mean cross-entropy gradient; zero on an empty dataset.
    pub fn gradient(&self, w: &[f64], data: &Dataset) -> Vec<f64> {
        let stride = self.d_feat + 1;
        let mut g = vec![0.0; self.dim()];
        if data.is_empty() {
            return g;
        }
        for (x, &y) in data.x.iter().zip(&data.y) {
            let z = self.logits(w, x);
            let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
            let total: f64 = e.iter().sum();
            for c in 0..self.classes {
                let coef = e[c] / total - if c == y { 1.0 } else { 0.0 };
                let row = &mut g[c * stride..(c + 1) * stride];
                for (gj, xj) in row[..self.d_feat].iter_mut().zip(x) {
                    *gj += coef * xj;
                }
                row[self.d_feat] += coef;
            }
        }
        let n = data.len() as f64;
        g.iter_mut().for_each(|v| *v /= n);
        g
    }

    pub fn accuracy(&self, w: &[f64], data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = data
            .x
            .iter()
            .zip(&data.y)
            .filter(|(x, &y)| self.predict(w, x) == y)
            .count();
        hits as f64 / data.len() as f64
    }
}

/// Gaussian class-conditional features with equal-norm class means.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub model: Softmax,
    pub means: Vec<Vec<f64>>,
    /// Bayes classifier of the generating distribution.
    pub true_weights: Vec<f64>,
    pub train: Dataset,
    pub test: Dataset,
    pub calibration: Dataset,
}

impl SyntheticTask {
    pub fn generate<R: Rng + ?Sized>(
        d_feat: usize,
        classes: usize,
        n_train: usize,
        n_test: usize,
        n_calibration: usize,
        separation: f64,
        rng: &mut R,
    ) -> Self {
        let radius = separation * (d_feat as f64).sqrt();
        let means: Vec<Vec<f64>> = (0..classes)
            .map(|_| {
                let v: Vec<f64> = (0..d_feat).map(|_| StandardNormal.sample(rng)).collect();
                let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                v.iter().map(|a| a * radius / n).collect()
            })
            .collect();
        // identity covariance and equal norms: logits mu_c . x, no bias needed
        let mut true_weights = Vec::with_capacity(classes * (d_feat + 1));
        for mu in &means {
            true_weights.extend_from_slice(mu);
            true_weights.push(0.0);
        }
        let sample = |n: usize, rng: &mut R| {
            let mut data = Dataset::default();
            for _ in 0..n {
                let y = rng.random_range(0..classes);
                let x: Vec<f64> = means[y]
                    .iter()
                    .map(|m| m + Distribution::<f64>::sample(&StandardNormal, rng))
                    .collect();
                data.x.push(x);
                data.y.push(y);
            }
            data
        };
        let train = sample(n_train, rng);
        let test = sample(n_test, rng);
        let calibration = sample(n_calibration, rng);
        SyntheticTask {
            model: Softmax { d_feat, classes },
            means,
            true_weights,
            train,
            test,
            calibration,
        }
    }
}

/// Clients belonging to group `g`: `c ≡ g (mod M)` when `K >= M`, else the
/// single client `g mod K`.
pub fn group_clients(g: usize, k: usize, classes: usize) -> Vec<usize> {
    if k >= classes {
        (g..k).step_by(classes).collect()
    } else {
        vec![g % k]
    }
}

/// Routes each example to its label's group with probability `q`, otherwise
/// to one of the other groups uniformly, then to a uniform client of that
/// group. Returns example indices per client.
pub fn partition_noniid<R: Rng + ?Sized>(
    labels: &[usize],
    k: usize,
    classes: usize,
    q: f64,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if k == 0 || classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "partition needs K >= 1 and M >= 2, got K={k}, M={classes}"
        )));
    }
    let q_min = 1.0 / classes as f64;
    if !(q >= q_min - 1e-12 && q <= 1.0) {
        return Err(Error::InvalidParameter(format!("q must be in [1/M, 1], got {q}")));
    }
    let groups: Vec<Vec<usize>> = (0..classes).map(|g| group_clients(g, k, classes)).collect();
    let mut out = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::InvalidParameter(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        let g = if rng.random::<f64>() < q {
            l
        } else {
            let o = rng.random_range(0..classes - 1);
            if o >= l {
                o + 1
            } else {
                o
            }
        };
        let members = &groups[g];
        out[members[rng.random_range(0..members.len())]].push(i);
    }
    Ok(out)
}

/// Sign of the calibration-set gradient at `w`.
pub fn root_direction(model: &Softmax, calibration: &Dataset, w: &[f64]) -> Result<ReferenceDirection> {
    if calibration.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    Ok(ReferenceDirection::from_real(
        &model.gradient(w, calibration),
        ReferenceSource::RootData,
    ))
}

fn sign_bits(v: &[f64]) -> Vec<bool> {
    v.iter().map(|&x| x >= 0.0).collect()
}

/// `1 - 2 hd / d` between the sign patterns of two real vectors.
pub fn sign_cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let hd = hamming_count(&sign_bits(a), &sign_bits(b))?;
    cosine_from_hamming(hd, a.len() as u64)
}

fn add_trigger(x: &mut [f64], width: usize) {
    x.iter_mut().take(width).for_each(|v| *v = TRIGGER_VALUE);
}

/// Trigger width `ceil(0.05 d_feat)`.
pub fn trigger_width(d_feat: usize) -> usize {
    (d_feat as f64 * 0.05).ceil() as usize
}

/// Fraction of non-target test points classified as `target` once the
/// trigger is applied.
pub fn attack_success_rate(model: &Softmax, w: &[f64], test: &Dataset, target: usize) -> Option<f64> {
    let width = trigger_width(model.d_feat);
    let mut hits = 0usize;
    let mut total = 0usize;
    for (x, &y) in test.x.iter().zip(&test.y) {
        if y == target {
            continue;
        }
        let mut xt = x.clone();
        add_trigger(&mut xt, width);
        total += 1;
        hits += (model.predict(w, &xt) == target) as usize;
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub count: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub mean: f64,
}

impl WeightSummary {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(WeightSummary {
            count: values.len(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            median: median(values).ok()?,
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: values.iter().sum::<f64>() / values.len() as f64,
        })
    }
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub schema_version: u32,
    pub round: u64,
    pub mode: ExecMode,
    pub aggregator: Aggregator,
    /// Test accuracy after this round's update.
    pub accuracy: f64,
    /// Only while the scaling attack is active.
    pub asr: Option<f64>,
    pub upload_bytes_per_client: Option<u64>,
    pub server_to_server_bytes: Option<u64>,
    pub mac_overhead_bytes: Option<u64>,
    pub total_bytes: Option<u64>,
    pub aborted: bool,
    pub abort: Option<AbortReport>,
    /// Slots excluded by the drop policy.
    pub dropped: usize,
    /// No client fell strictly below the threshold; the model was not updated.
    pub no_trusted: bool,
    pub updated: bool,
    pub tau: Option<f64>,
    pub alpha_benign: Option<WeightSummary>,
    pub alpha_malicious: Option<WeightSummary>,
    /// Sign agreement `1 - 2 hd / d` of the aggregate with the full-data gradient.
    pub cosine_true: Option<f64>,
    /// The same agreement restricted to coordinates with `|g_j| >= 2 * sensitivity`.
    pub cosine_strong: Option<f64>,
    /// Number of such coordinates.
    pub strong_coords: usize,
    /// Largest benign raw gradient coordinate, before clipping.
    pub max_abs_grad: f64,
    /// Secure output equals the plaintext sign-mode aggregate of the same inputs.
    pub oracle_match: Option<bool>,
    pub tamper: Option<TamperRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub seed: u64,
    pub rounds: usize,
    pub mode: ExecMode,
    pub aggregator: Aggregator,
    pub attack: AttackKind,
    pub malicious_fraction: f64,
    pub malicious_clients: usize,
    pub clients: usize,
    pub d: usize,
    pub epsilon: f64,
    pub sigma: f64,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub final_asr: Option<f64>,
    pub mean_cosine_true: Option<f64>,
    pub mean_cosine_strong: Option<f64>,
    pub aborts: usize,
    pub no_trusted_rounds: usize,
    pub oracle_mismatches: usize,
    pub mean_alpha_benign: Option<f64>,
    pub mean_alpha_malicious: Option<f64>,
}

/// CSV header matching [`RunSummary::csv_row`].
pub const SUMMARY_CSV_HEADER: [&str; 21] = [
    "seed",
    "rounds",
    "mode",
    "aggregator",
    "attack",
    "malicious_fraction",
    "malicious_clients",
    "clients",
    "d",
    "epsilon",
    "sigma",
    "final_accuracy",
    "best_accuracy",
    "final_asr",
    "mean_cosine_true",
    "mean_cosine_strong",
    "aborts",
    "no_trusted_rounds",
    "oracle_mismatches",
    "mean_alpha_benign",
    "mean_alpha_malicious",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn enum_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|s| s.as_str().map(str::to_owned))
        .unwrap_or_default()
}

impl RunSummary {
    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.seed.to_string(),
            self.rounds.to_string(),
            enum_name(&self.mode),
            enum_name(&self.aggregator),
            enum_name(&self.attack),
            self.malicious_fraction.to_string(),
            self.malicious_clients.to_string(),
            self.clients.to_string(),
            self.d.to_string(),
            self.epsilon.to_string(),
            self.sigma.to_string(),
            self.final_accuracy.to_string(),
            self.best_accuracy.to_string(),
            opt(self.final_asr),
            opt(self.mean_cosine_true),
            opt(self.mean_cosine_strong),
            self.aborts.to_string(),
            self.no_trusted_rounds.to_string(),
            self.oracle_mismatches.to_string(),
            opt(self.mean_alpha_benign),
            opt(self.mean_alpha_malicious),
        ]
    }
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum MetricsLine<'a> {
    Round(&'a RoundMetrics),
    Summary(&'a RunSummary),
}

/// One JSON line per round followed by one summary line.
pub fn write_metrics<W: Write>(mut out: W, rounds: &[RoundMetrics], summary: &RunSummary) -> std::io::Result<()> {
    for r in rounds {
        serde_json::to_writer(&mut out, &MetricsLine::Round(r))?;
        out.write_all(b"\n")?;
    }
    serde_json::to_writer(&mut out, &MetricsLine::Summary(summary))?;
    out.write_all(b"\n")
}

pub struct RoundOutput {
    pub metrics: RoundMetrics,
    /// The applied aggregate, when the model was updated.
    pub aggregate: Option<Vec<f64>>,
    pub transcript: Option<RoundTranscript>,
    pub comm: Option<CommBreakdown>,
    pub dump: Option<TranscriptDump>,
}

pub struct RunResult {
    pub rounds: Vec<RoundMetrics>,
    pub summary: RunSummary,
    pub dumps: Vec<TranscriptDump>,
    pub model: Vec<f64>,
}

struct ClientState {
    data: Dataset,
    /// Labels before any flip; used by the adaptive attacker's template.
    clean_y: Vec<usize>,
    malicious: bool,
    seed: Seed,
}

struct ClientStep {
    raw: Vec<f64>,
    update: SignUpdate,
}

/// Public inputs of one secure round besides the client updates.
pub struct SecureRound<'a> {
    pub modulus: Modulus,
    pub dealer_seed: &'a Seed,
    pub round: u64,
    pub lambda_mad: f64,
    pub policy: IntegrityPolicy,
    /// Seeds for each client's share randomness, by pre-shuffle index.
    pub client_seeds: &'a [Seed],
    pub tamper: Option<&'a ServerTamperSpec>,
    pub dump: bool,
}

pub struct SecureOutcome {
    /// Opened sign vector; `None` on abort or when no client is trusted.
    pub signs: Option<Vec<i8>>,
    pub abort: Option<AbortReport>,
    pub dropped: usize,
    pub no_support: bool,
    /// Plaintext sign-mode aggregation of the surviving inputs.
    pub oracle: Option<RainOutcome>,
    /// Pre-shuffle indices of the clients whose slots were aggregated.
    pub survivors: Vec<usize>,
    pub transcript: RoundTranscript,
    pub dump: Option<TranscriptDump>,
    pub tamper: Option<TamperRecord>,
}

/// Uploads, shuffle, MAC verification and Phase II for one round, with the
/// plaintext oracle computed on the same surviving inputs.
pub fn secure_aggregate(
    inputs: &SecureRound<'_>,
    updates: &[SignUpdate],
    reference: &ReferenceDirection,
) -> Result<SecureOutcome> {
    let m = inputs.modulus;
    let k = updates.len();
    let d = reference.len();
    let round = inputs.round;
    let policy = inputs.policy;
    check_len(k, inputs.client_seeds.len())?;
    let bundle = dealer_setup(m, inputs.dealer_seed, k, d, round)?;
    let mut t = RoundTranscript::new(round);

    // uploads and the upload-tag check gate
    let mut shares = [Vec::with_capacity(k), Vec::with_capacity(k)];
    for (i, u) in updates.iter().enumerate() {
        let (s0, s1) = encode_and_split(m, u, &mut Prg::stream(&inputs.client_seeds[i], round, "share"))?;
        let tag = mac_tag(m, &u.to_ring(), &bundle.upload_key)?;
        t.record(Sender::Client(i), MessageKind::Upload, d as u64);
        t.record(Sender::Client(i), MessageKind::Upload, d as u64);
        t.record(Sender::Client(i), MessageKind::UploadTag, 1);
        let partial = m.add(
            m.dot(&bundle.upload_key, &s0.elems)?,
            m.dot(&bundle.upload_key, &s1.elems)?,
        );
        t.record_open(OpenKind::UploadCheck, MessageKind::TagCheck, 1);
        if partial != tag {
            return Err(Error::Malformed(format!("upload tag mismatch for client {i}")));
        }
        shares[0].push(s0);
        shares[1].push(s1);
    }

    let mut shuffle = shuffle_offline(&bundle, k, d)?;
    let full_key = bundle.mac_key.combined(m)?;
    let mut batches = Vec::with_capacity(2);
    for party in Party::BOTH {
        let out = shuffle.apply(party, &shares[party.index()])?;
        let items = out
            .into_iter()
            .map(|s| tag_share(m, s, &full_key))
            .collect::<Result<Vec<_>>>()?;
        for _ in &items {
            t.record(Sender::Party(party.index()), MessageKind::ShuffledShare, d as u64);
            t.record(Sender::Party(party.index()), MessageKind::ShuffledTag, 1);
        }
        batches.push(TaggedBatch { round, party, items });
    }
    let mut batches: [TaggedBatch; 2] = batches.try_into().expect("two parties");

    let tamper = match inputs.tamper {
        Some(spec) => Some(server_tamper(m, &mut batches[spec.party], spec)?),
        None => None,
    };
    let dump = inputs.dump.then(|| TranscriptDump {
        modulus: m,
        k,
        d,
        round,
        seed: *inputs.dealer_seed,
        batches: batches.clone(),
        trailing_bytes: 0,
    });
    let mut result = SecureOutcome {
        signs: None,
        abort: None,
        dropped: 0,
        no_support: false,
        oracle: None,
        survivors: Vec::new(),
        transcript: RoundTranscript::new(round),
        dump,
        tamper,
    };

    let mut rejected = vec![false; k];
    for batch in &batches {
        if let Some(report) = check_cardinality(batch, k, policy) {
            result.abort = Some(report);
            result.transcript = t;
            return Ok(result);
        }
        let outcome = stream_check(m, batch, &bundle.mac_key, policy)?;
        for _ in 0..outcome.verified.len() + outcome.rejected.len() {
            t.record_open(OpenKind::TagCheck, MessageKind::TagCheck, 1);
        }
        if let Some(report) = outcome.abort {
            result.abort = Some(report);
            result.transcript = t;
            return Ok(result);
        }
        for i in outcome.rejected {
            rejected[i] = true;
        }
    }
    let kept: Vec<usize> = (0..k).filter(|&i| !rejected[i]).collect();
    result.dropped = k - kept.len();
    if kept.is_empty() {
        result.no_support = true;
        result.transcript = t;
        return Ok(result);
    }
    let slots = kept
        .iter()
        .map(|&i| SharedVector::from_pair(batches[0].items[i].share.clone(), batches[1].items[i].share.clone()))
        .collect::<Result<Vec<_>>>()?;
    result.survivors = kept.iter().map(|&i| shuffle.permutation.source(i)).collect();

    let reference_shared = SharedVector::public(
        reference
            .bits()
            .into_iter()
            .map(|b| if b { RingElement::ONE } else { RingElement::ZERO })
            .collect(),
    );
    let mut session = MpcSession::new(m, bundle.triples, inputs.dealer_seed, t);
    let out = session.phase_two(&slots, &reference_shared, inputs.lambda_mad)?;
    result.no_support = out.no_support;
    if !out.no_support {
        result.signs = Some(session.reveal_signs(&out.s_next)?);
    }
    audit_openings(&session.transcript, session.triples_consumed())?;
    result.transcript = session.transcript;

    // plaintext oracle on the same surviving inputs, for bookkeeping only
    let surviving: Vec<SignUpdate> = result.survivors.iter().map(|&i| updates[i].clone()).collect();
    result.oracle = Some(rain_aggregate(
        &surviving,
        reference,
        inputs.lambda_mad,
        OutputMode::Sign,
    )?);
    Ok(result)
}

pub struct Experiment {
    cfg: ExperimentConfig,
    params: RainParams,
    task: SyntheticTask,
    clients: Vec<ClientState>,
    dealer_seed: Seed,
    model: Vec<f64>,
    round: u64,
    previous_output: Option<Vec<i8>>,
    history: Vec<RoundMetrics>,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let params = cfg.rain_params()?;
        let t = &cfg.task;
        let root = Seed::from_u64(cfg.seed);
        let task = SyntheticTask::generate(
            t.d_feat,
            t.classes,
            t.clients * t.samples_per_client,
            t.test_size,
            t.calibration_size,
            t.class_separation,
            &mut Prg::stream(&root, 0, "task"),
        );
        let parts = partition_noniid(
            &task.train.y,
            t.clients,
            t.classes,
            t.q,
            &mut Prg::stream(&root, 0, "partition"),
        )?;
        let malicious = select_malicious(&cfg.attack, t.clients, &root);
        let width = trigger_width(t.d_feat);
        let mut trigger_rng = Prg::stream(&root, 0, "trigger");
        let mut clients = Vec::with_capacity(t.clients);
        for (i, idx) in parts.iter().enumerate() {
            let mut data = task.train.subset(idx);
            let clean_y = data.y.clone();
            let is_mal = malicious.binary_search(&i).is_ok();
            if is_mal {
                match cfg.attack.kind {
                    AttackKind::LabelFlip => data.y = label_flip(&data.y, t.classes)?,
                    AttackKind::Scaling => {
                        for (x, y) in data.x.iter_mut().zip(data.y.iter_mut()) {
                            if trigger_rng.random::<f64>() < cfg.attack.trigger_fraction {
                                add_trigger(x, width);
                                *y = cfg.attack.target_label;
                            }
                        }
                    }
                    _ => {}
                }
            }
            clients.push(ClientState {
                data,
                clean_y,
                malicious: is_mal,
                seed: root.derive("client", i as u64),
            });
        }
        let model = vec![0.0; task.model.dim()];
        Ok(Experiment {
            params,
            task,
            clients,
            dealer_seed: root.derive("dealer", 0),
            model,
            round: 0,
            previous_output: None,
            history: Vec::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn params(&self) -> &RainParams {
        &self.params
    }

    pub fn task(&self) -> &SyntheticTask {
        &self.task
    }

    pub fn model(&self) -> &[f64] {
        &self.model
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn malicious(&self) -> Vec<bool> {
        self.clients.iter().map(|c| c.malicious).collect()
    }

    pub fn test_accuracy(&self) -> f64 {
        self.task.model.accuracy(&self.model, &self.task.test)
    }

    fn reference(&self) -> Result<ReferenceDirection> {
        match (self.cfg.rain.reference, &self.previous_output) {
            (ReferenceSource::PreviousRound, Some(prev)) => Ok(ReferenceDirection {
                signs: prev.clone(),
                source: ReferenceSource::PreviousRound,
            }),
            _ => root_direction(&self.task.model, &self.task.calibration, &self.model),
        }
    }

    fn client_steps(&self) -> Result<Vec<ClientStep>> {
        let model = self.task.model;
        let w = &self.model;
        let round = self.round;
        let attack = &self.cfg.attack;
        let classes = self.cfg.task.classes;
        let sigma = self.params.sigma;

        let mut raw: Vec<Vec<f64>> = self
            .clients
            .par_iter()
            .map(|c| -> Result<Vec<f64>> {
                let g = model.gradient(w, &c.data);
                if !c.malicious {
                    return Ok(g);
                }
                Ok(match attack.kind {
                    AttackKind::Scaling => scaling_attack(&g, attack.amplification),
                    AttackKind::DpflAdaptive => {
                        let template = model.gradient(
                            w,
                            &Dataset {
                                x: c.data.x.clone(),
                                y: c.clean_y.clone(),
                            },
                        );
                        let flipped = Dataset {
                            x: c.data.x.clone(),
                            y: label_flip(&c.clean_y, classes)?,
                        };
                        let poison = model.gradient(w, &flipped);
                        let mut rng = Prg::stream(&c.seed, round, "dpfl");
                        if poison.iter().all(|&v| v == 0.0) {
                            template
                        } else {
                            dpfl_adaptive(&poison, &template, sigma, &mut rng)?
                        }
                    }
                    _ => g,
                })
            })
            .collect::<Result<_>>()?;

        if matches!(attack.kind, AttackKind::KrumAttack | AttackKind::TrimAttack) {
            let mal: Vec<usize> = (0..self.clients.len()).filter(|&i| self.clients[i].malicious).collect();
            let benign: Vec<Vec<f64>> = raw
                .iter()
                .zip(&self.clients)
                .filter(|(_, c)| !c.malicious)
                .map(|(g, _)| g.clone())
                .collect();
            if !mal.is_empty() && !benign.is_empty() {
                let crafted = if attack.kind == AttackKind::KrumAttack {
                    krum_attack(&benign, mal.len())?
                } else {
                    trim_attack(&benign, mal.len())?
                };
                for (i, u) in mal.into_iter().zip(crafted) {
                    raw[i] = u;
                }
            }
        }

        let clip_bound = self.params.clip;
        raw.into_par_iter()
            .zip(self.clients.par_iter())
            .map(|(g, c)| {
                let clipped = clip(&g, clip_bound)?;
                let update = sign_gaussian(&clipped, sigma, &mut Prg::stream(&c.seed, round, "noise"));
                Ok(ClientStep { raw: g, update })
            })
            .collect()
    }

    /// Runs one full round and applies the update.
    pub fn step(&mut self) -> Result<RoundOutput> {
        let model = self.task.model;
        let steps = self.client_steps()?;
        let reference = self.reference()?;
        let true_grad = model.gradient(&self.model, &self.task.train);
        let updates: Vec<SignUpdate> = steps.iter().map(|s| s.update.clone()).collect();
        let malicious = self.malicious();
        let max_abs_grad = steps
            .iter()
            .zip(&malicious)
            .filter(|(_, &m)| !m)
            .flat_map(|(s, _)| s.raw.iter().map(|v| v.abs()))
            .fold(0.0, f64::max);

        let mut metrics = RoundMetrics {
            schema_version: METRICS_SCHEMA_VERSION,
            round: self.round,
            mode: self.cfg.mode,
            aggregator: self.cfg.aggregator,
            accuracy: 0.0,
            asr: None,
            upload_bytes_per_client: None,
            server_to_server_bytes: None,
            mac_overhead_bytes: None,
            total_bytes: None,
            aborted: false,
            abort: None,
            dropped: 0,
            no_trusted: false,
            updated: false,
            tau: None,
            alpha_benign: None,
            alpha_malicious: None,
            cosine_true: None,
            cosine_strong: None,
            strong_coords: 0,
            max_abs_grad,
            oracle_match: None,
            tamper: None,
        };
        let mut transcript = None;
        let mut comm = None;
        let mut dump = None;
        let mut eta = self.cfg.eta();

        // Trust weights paired with the malicious flag of the client that sent each update.
        type Weights = Option<(Vec<f64>, Vec<bool>)>;
        let (aggregate, weights): (Option<Vec<f64>>, Weights) = match self.cfg.aggregator {
            Aggregator::Rain => match self.cfg.mode {
                ExecMode::Plaintext => {
                    let out = rain_aggregate(&updates, &reference, self.params.lambda_mad, self.params.output_mode)?;
                    metrics.tau = Some(out.tau);
                    metrics.no_trusted = out.weights.no_trusted;
                    (out.update, Some((out.weights.alpha, malicious.clone())))
                }
                ExecMode::Mpc => {
                    let seeds: Vec<Seed> = self.clients.iter().map(|c| c.seed).collect();
                    let tamper = self.cfg.tamper.iter().find(|e| e.round == self.round).map(|e| &e.spec);
                    let inputs = SecureRound {
                        modulus: self.params.modulus,
                        dealer_seed: &self.dealer_seed,
                        round: self.round,
                        lambda_mad: self.params.lambda_mad,
                        policy: self.params.integrity,
                        client_seeds: &seeds,
                        tamper,
                        dump: self.cfg.dump_transcript,
                    };
                    let res = secure_aggregate(&inputs, &updates, &reference)?;
                    let c = comm_account(&res.transcript);
                    metrics.upload_bytes_per_client = c.per_client_upload.iter().copied().max();
                    metrics.server_to_server_bytes = Some(c.server_to_server);
                    metrics.mac_overhead_bytes = Some(c.mac_overhead);
                    metrics.total_bytes = Some(c.total);
                    metrics.aborted = res.abort.is_some();
                    metrics.abort = res.abort;
                    metrics.dropped = res.dropped;
                    metrics.no_trusted = res.no_support;
                    metrics.tamper = res.tamper;
                    dump = res.dump;
                    comm = Some(c);
                    transcript = Some(res.transcript);
                    let signs = res.signs.map(|s| s.into_iter().map(f64::from).collect::<Vec<_>>());
                    let weights = res.oracle.as_ref().map(|o| {
                        metrics.tau = Some(o.tau);
                        metrics.oracle_match = Some(o.update == signs);
                        (
                            o.weights.alpha.clone(),
                            res.survivors.iter().map(|&i| malicious[i]).collect(),
                        )
                    });
                    (signs, weights)
                }
            },
            Aggregator::Mean | Aggregator::CoordMedian => {
                let kind = if self.cfg.aggregator == Aggregator::Mean {
                    BaselineKind::Mean
                } else {
                    BaselineKind::CoordMedian
                };
                let raw: Vec<Vec<f64>> = steps.iter().map(|s| s.raw.clone()).collect();
                eta = self.cfg.task.baseline_eta;
                (Some(baseline_aggregate(&raw, kind)?), None)
            }
            Aggregator::MajoritySign => {
                let signs: Vec<Vec<f64>> = updates.iter().map(|u| u.signs_f64()).collect();
                (Some(baseline_aggregate(&signs, BaselineKind::MajoritySign)?), None)
            }
        };

        if let Some((alpha, labels)) = weights {
            let pick = |want: bool| -> Vec<f64> {
                alpha
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &m)| m == want)
                    .map(|(&a, _)| a)
                    .collect()
            };
            metrics.alpha_benign = WeightSummary::of(&pick(false));
            metrics.alpha_malicious = WeightSummary::of(&pick(true));
        }

        if let Some(agg) = &aggregate {
            metrics.cosine_true = Some(sign_cosine(agg, &true_grad)?);
            let floor = 2.0 * self.params.sensitivity;
            let strong: Vec<usize> = (0..agg.len()).filter(|&j| true_grad[j].abs() >= floor).collect();
            metrics.strong_coords = strong.len();
            if !strong.is_empty() {
                let pick = |v: &[f64]| strong.iter().map(|&j| v[j]).collect::<Vec<_>>();
                metrics.cosine_strong = Some(sign_cosine(&pick(agg), &pick(&true_grad))?);
            }
            self.model = model_update(&self.model, agg, eta)?;
            metrics.updated = true;
            self.previous_output = Some(agg.iter().map(|&v| if v >= 0.0 { 1 } else { -1 }).collect());
        }
        metrics.accuracy = self.test_accuracy();
        if self.cfg.attack.kind == AttackKind::Scaling && self.cfg.attack.malicious_count(self.clients.len()) > 0 {
            metrics.asr = attack_success_rate(&model, &self.model, &self.task.test, self.cfg.attack.target_label);
        }
        self.round += 1;
        self.history.push(metrics.clone());
        Ok(RoundOutput {
            metrics,
            aggregate,
            transcript,
            comm,
            dump,
        })
    }

    pub fn summary(&self) -> RunSummary {
        let h = &self.history;
        let mean_of = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        RunSummary {
            schema_version: METRICS_SCHEMA_VERSION,
            seed: self.cfg.seed,
            rounds: h.len(),
            mode: self.cfg.mode,
            aggregator: self.cfg.aggregator,
            attack: self.cfg.attack.kind,
            malicious_fraction: self.cfg.attack.malicious_fraction,
            malicious_clients: self.clients.iter().filter(|c| c.malicious).count(),
            clients: self.clients.len(),
            d: self.task.model.dim(),
            epsilon: self.params.epsilon,
            sigma: self.params.sigma,
            final_accuracy: h.last().map(|r| r.accuracy).unwrap_or(0.0),
            best_accuracy: h.iter().map(|r| r.accuracy).fold(0.0, f64::max),
            final_asr: h.last().and_then(|r| r.asr),
            mean_cosine_true: mean_of(h.iter().filter_map(|r| r.cosine_true).collect()),
            mean_cosine_strong: mean_of(h.iter().filter_map(|r| r.cosine_strong).collect()),
            aborts: h.iter().filter(|r| r.aborted).count(),
            no_trusted_rounds: h.iter().filter(|r| r.no_trusted).count(),
            oracle_mismatches: h.iter().filter(|r| r.oracle_match == Some(false)).count(),
            mean_alpha_benign: mean_of(
                h.iter()
                    .filter_map(|r| r.alpha_benign.as_ref().map(|w| w.mean))
                    .collect(),
            ),
            mean_alpha_malicious: mean_of(
                h.iter()
                    .filter_map(|r| r.alpha_malicious.as_ref().map(|w| w.mean))
                    .collect(),
            ),
        }
    }

    /// Runs every configured round. Aborted rounds are recorded and skipped;
    /// `abort_is_fatal` is left to the caller.
    pub fn run(mut self) -> Result<RunResult> {
        let mut dumps = Vec::new();
        for _ in 0..self.cfg.rounds {
            if let Some(d) = self.step()?.dump {
                dumps.push(d);
            }
        }
        Ok(RunResult {
            rounds: self.history.clone(),
            summary: self.summary(),
            dumps,
            model: self.model,
        })
    }
}

pub fn run_experiment(cfg: ExperimentConfig) -> Result<RunResult> {
    Experiment::new(cfg)?.run()
}
