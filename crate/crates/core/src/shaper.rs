//! Connectivity profiles and the token bucket that meters shaped links.
//!
//! The bucket is clock-agnostic: callers pass the current time in seconds,
//! which keeps it usable from the async stream shaper and from tests.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileName {
    Slow,
    Average,
    Fast,
    Custom,
}

/// Symmetric bandwidth plus round-trip time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectivityProfile {
    pub name: ProfileName,
    pub bandwidth_bps: u64,
    pub rtt_ms: u64,
}

impl ConnectivityProfile {
    pub const SLOW: Self = Self {
        name: ProfileName::Slow,
        bandwidth_bps: 20_000_000,
        rtt_ms: 100,
    };
    pub const AVERAGE: Self = Self {
        name: ProfileName::Average,
        bandwidth_bps: 50_000_000,
        rtt_ms: 50,
    };
    pub const FAST: Self = Self {
        name: ProfileName::Fast,
        bandwidth_bps: 100_000_000,
        rtt_ms: 20,
    };

    pub const PRESETS: [Self; 3] = [Self::SLOW, Self::AVERAGE, Self::FAST];

    pub fn custom(bandwidth_bps: u64, rtt_ms: u64) -> Result<Self, String> {
        if bandwidth_bps == 0 {
            return Err("bandwidth must be > 0".into());
        }
        Ok(Self {
            name: ProfileName::Custom,
            bandwidth_bps,
            rtt_ms,
        })
    }

    pub fn one_way_delay_secs(&self) -> f64 {
        self.rtt_ms as f64 / 2000.0
    }

    pub fn bytes_per_sec(&self) -> f64 {
        self.bandwidth_bps as f64 / 8.0
    }

    /// Bucket depth: 100 ms worth of bytes at the profile's rate.
    pub fn burst_bytes(&self) -> f64 {
        self.bytes_per_sec() * 0.1
    }

    /// Request/response time for `bytes` of payload over a fresh shaped link:
    /// one round trip plus serialization at the link rate.
    pub fn expected_transfer_secs(&self, bytes: u64) -> f64 {
        bytes as f64 * 8.0 / self.bandwidth_bps as f64 + self.rtt_ms as f64 / 1000.0
    }
}

impl FromStr for ConnectivityProfile {
    type Err = String;

    /// `slow`, `average`, `fast`, or `custom:<mbps>:<rtt_ms>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "slow" => Ok(Self::SLOW),
            "average" => Ok(Self::AVERAGE),
            "fast" => Ok(Self::FAST),
            other => {
                let rest = other
                    .strip_prefix("custom:")
                    .ok_or_else(|| format!("unknown profile `{s}` (slow, average, fast, custom:<mbps>:<rtt_ms>)"))?;
                let (mbps, rtt) = rest
                    .split_once(':')
                    .ok_or_else(|| format!("expected custom:<mbps>:<rtt_ms>, got `{s}`"))?;
                let mbps: f64 = mbps.parse().map_err(|_| format!("bad bandwidth in `{s}`"))?;
                let rtt: u64 = rtt.parse().map_err(|_| format!("bad rtt in `{s}`"))?;
                if !(mbps.is_finite() && mbps > 0.0) {
                    return Err(format!("bandwidth must be > 0 in `{s}`"));
                }
                Self::custom((mbps * 1_000_000.0).round() as u64, rtt)
            }
        }
    }
}

impl fmt::Display for ConnectivityProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name {
            ProfileName::Slow => f.write_str("slow"),
            ProfileName::Average => f.write_str("average"),
            ProfileName::Fast => f.write_str("fast"),
            ProfileName::Custom => write!(
                f,
                "custom:{}:{}",
                self.bandwidth_bps as f64 / 1_000_000.0,
                self.rtt_ms
            ),
        }
    }
}

/// Byte-denominated token bucket. Starts empty so a fresh link cannot burst
/// ahead of its rate; refills at `rate` up to `burst`.
#[derive(Debug, Clone)]
pub struct TokenBucket {
    rate: f64,
    burst: f64,
    tokens: f64,
    last: f64,
}

impl TokenBucket {
    pub fn new(bytes_per_sec: f64, burst_bytes: f64, now: f64) -> Self {
        Self {
            rate: bytes_per_sec,
            burst: burst_bytes,
            tokens: 0.0,
            last: now,
        }
    }

    pub fn for_profile(profile: &ConnectivityProfile, now: f64) -> Self {
        Self::new(profile.bytes_per_sec(), profile.burst_bytes(), now)
    }

    fn refill(&mut self, now: f64) {
        if now > self.last {
            self.tokens = (self.tokens + (now - self.last) * self.rate).min(self.burst);
            self.last = now;
        }
    }

    /// Takes `bytes` tokens, going into debt if needed, and returns how many
    /// seconds the caller must wait before the bytes may leave.
    pub fn reserve(&mut self, bytes: usize, now: f64) -> f64 {
        self.refill(now);
        self.tokens -= bytes as f64;
        if self.tokens >= 0.0 {
            0.0
        } else {
            -self.tokens / self.rate
        }
    }

    pub fn tokens(&self) -> f64 {
        self.tokens
    }
}
