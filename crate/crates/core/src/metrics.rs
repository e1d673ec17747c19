//! Invocation counters and timers, and the NBP / RTF metrics derived from them.

use std::ops::AddAssign;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

/// Counters for one decode. Times are wall-clock.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    /// True when the decode used a factorized joiner.
    pub factorized: bool,
    pub blank_joiner_calls: u64,
    /// Blank calls on hypotheses that could not be extended (symbol or
    /// length cap), where no non-blank call was ever possible.
    pub capped_blank_calls: u64,
    pub nonblank_joiner_calls: u64,
    pub full_joiner_calls: u64,
    pub predictor_calls: u64,
    pub encoder_calls: u64,
    /// Encoder frames consumed by the search.
    pub frames: u64,
    #[serde(with = "secs")]
    pub joiner_time: Duration,
    #[serde(with = "secs")]
    pub predictor_time: Duration,
    #[serde(with = "secs")]
    pub encoder_time: Duration,
    #[serde(with = "secs")]
    pub total_time: Duration,
    #[serde(with = "secs")]
    pub audio_duration: Duration,
}

impl RuntimeStats {
    pub fn new(factorized: bool) -> Self {
        RuntimeStats {
            factorized,
            ..Default::default()
        }
    }

    pub fn joiner_calls(&self) -> u64 {
        self.blank_joiner_calls + self.nonblank_joiner_calls + self.full_joiner_calls
    }

    /// Sets the audio duration from a frame count.
    pub fn set_audio(&mut self, frames: u64, frame_duration_ms: f64) {
        self.frames = frames;
        self.audio_duration = Duration::from_secs_f64(frames as f64 * frame_duration_ms / 1000.0);
    }

    /// Copy with every timer zeroed; what remains is fully deterministic.
    pub fn without_timing(&self) -> RuntimeStats {
        RuntimeStats {
            joiner_time: Duration::ZERO,
            predictor_time: Duration::ZERO,
            encoder_time: Duration::ZERO,
            total_time: Duration::ZERO,
            ..self.clone()
        }
    }
}

impl AddAssign<&RuntimeStats> for RuntimeStats {
    fn add_assign(&mut self, o: &RuntimeStats) {
        self.factorized |= o.factorized;
        self.blank_joiner_calls += o.blank_joiner_calls;
        self.capped_blank_calls += o.capped_blank_calls;
        self.nonblank_joiner_calls += o.nonblank_joiner_calls;
        self.full_joiner_calls += o.full_joiner_calls;
        self.predictor_calls += o.predictor_calls;
        self.encoder_calls += o.encoder_calls;
        self.frames += o.frames;
        self.joiner_time += o.joiner_time;
        self.predictor_time += o.predictor_time;
        self.encoder_time += o.encoder_time;
        self.total_time += o.total_time;
        self.audio_duration += o.audio_duration;
    }
}

/// Runs `f` and adds its wall-clock time to `slot`.
#[inline]
pub(crate) fn timed<T>(slot: &mut Duration, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *slot += start.elapsed();
    out
}

/// Non-blank percentage: `100 * nonblank / blank` joiner calls, where blank
/// calls on hypotheses that could not be extended anyway are left out. A
/// single non-factorized joiner computes both every time, so it is always 100.
pub fn nbp(stats: &RuntimeStats) -> Result<f64> {
    if !stats.factorized {
        return Ok(100.0);
    }
    let blank = stats.blank_joiner_calls.saturating_sub(stats.capped_blank_calls);
    if blank == 0 {
        return Err(Error::UndefinedMetric("NBP needs at least one extendable blank joiner call"));
    }
    Ok(100.0 * stats.nonblank_joiner_calls as f64 / blank as f64)
}

/// `(joiner_time / audio, total_time / audio)`.
pub fn rtf(stats: &RuntimeStats) -> Result<(f64, f64)> {
    let audio = stats.audio_duration.as_secs_f64();
    if audio <= 0.0 {
        return Err(Error::UndefinedMetric("RTF needs a positive audio duration"));
    }
    Ok((
        stats.joiner_time.as_secs_f64() / audio,
        stats.total_time.as_secs_f64() / audio,
    ))
}
