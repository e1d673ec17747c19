use serde::{Deserialize, Serialize};

use crate::decoder::{BeamConfig, DecodeResult};
use crate::error::{Error, Result};
use crate::metrics::{nbp, rtf, RuntimeStats};
use crate::model::TokenId;
use crate::power::EnergyBreakdown;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// JSON schema every serialized [`StatsReport`] validates against.
pub const REPORT_SCHEMA: &str = include_str!("../../schema/stats_report.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub model: String,
    pub factorized: bool,
    /// Threshold label: a logit, `disabled`, or `p=<prob>`.
    pub thresh: String,
    pub p_threshold: f64,
    pub beam_width: usize,
    pub max_symbols_per_frame: usize,
}

impl ConfigEcho {
    pub fn new(model: impl Into<String>, factorized: bool, cfg: &BeamConfig) -> Self {
        ConfigEcho {
            model: model.into(),
            factorized,
            thresh: cfg.thresh.label(),
            p_threshold: cfg.p_threshold(),
            beam_width: cfg.beam_width,
            max_symbols_per_frame: cfg.max_symbols_per_frame,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceReport {
    pub id: String,
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub nbp: f64,
    pub rtf_join: f64,
    pub rtf_all: f64,
    pub stats: RuntimeStats,
}

impl UtteranceReport {
    pub fn new(id: impl Into<String>, result: &DecodeResult) -> Result<Self> {
        let (rtf_join, rtf_all) = rtf(&result.stats)?;
        Ok(UtteranceReport {
            id: id.into(),
            tokens: result.best().tokens.clone(),
            log_prob: result.best().log_prob,
            nbp: nbp(&result.stats)?,
            rtf_join,
            rtf_all,
            stats: result.stats.clone(),
        })
    }
}

/// Means over utterances, plus pooled counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub utterances: usize,
    pub nbp: f64,
    pub rtf_join: f64,
    pub rtf_all: f64,
    /// NBP from pooled call counts rather than the per-utterance mean.
    pub pooled_nbp: f64,
    pub totals: RuntimeStats,
}

impl AggregateStats {
    pub fn from_utterances(utts: &[UtteranceReport]) -> Result<Self> {
        if utts.is_empty() {
            return Err(Error::Empty("utterances"));
        }
        let n = utts.len() as f64;
        let mean = |f: fn(&UtteranceReport) -> f64| utts.iter().map(f).sum::<f64>() / n;
        let mut totals = RuntimeStats::new(utts[0].stats.factorized);
        for u in utts {
            totals += &u.stats;
        }
        Ok(AggregateStats {
            utterances: utts.len(),
            nbp: mean(|u| u.nbp),
            rtf_join: mean(|u| u.rtf_join),
            rtf_all: mean(|u| u.rtf_all),
            pooled_nbp: nbp(&totals)?,
            totals,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub schema_version: u32,
    pub config: ConfigEcho,
    pub utterances: Vec<UtteranceReport>,
    pub aggregate: AggregateStats,
    pub energy: Option<EnergyBreakdown>,
    pub power_assumptions: Vec<String>,
}

impl StatsReport {
    pub fn new(config: ConfigEcho, utterances: Vec<UtteranceReport>) -> Result<Self> {
        let aggregate = AggregateStats::from_utterances(&utterances)?;
        Ok(StatsReport {
            schema_version: REPORT_SCHEMA_VERSION,
            config,
            utterances,
            aggregate,
            energy: None,
            power_assumptions: Vec::new(),
        })
    }

    /// Copy with every wall-clock field zeroed.
    pub fn without_timing(&self) -> StatsReport {
        let mut r = self.clone();
        for u in &mut r.utterances {
            u.stats = u.stats.without_timing();
            u.rtf_join = 0.0;
            u.rtf_all = 0.0;
        }
        r.aggregate.totals = r.aggregate.totals.without_timing();
        r.aggregate.rtf_join = 0.0;
        r.aggregate.rtf_all = 0.0;
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
