use thiserror::Error;

/// Which primary a close approach was detected near.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primary {
    Jupiter,
    Sun,
}

impl std::fmt::Display for Primary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Primary::Jupiter => f.write_str("Jupiter"),
            Primary::Sun => f.write_str("Sun"),
        }
    }
}

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("collision with {primary} (distance {distance:e})")]
    Collision { primary: Primary, distance: f64 },

    #[error("collision guard tripped near {primary} at t = {t}")]
    CollisionApproach { primary: Primary, t: f64, last_state: [f64; 4] },

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("event not found before t = {t_max}")]
    EventNotFound { t_max: f64 },

    #[error("tangential crossing at t = {t} (rate {rate:e})")]
    Tangency { t: f64, rate: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("elliptic fixed point at J = {j} (trace {trace})")]
    Elliptic { j: f64, trace: f64 },

    #[error("channel {channel} absent at J = {j}: {reason}")]
    ChannelAbsent { channel: usize, j: f64, reason: String },

    #[error("grid too coarse for channel {channel} near J = {j}: refine")]
    GridTooCoarse { channel: usize, j: f64 },

    #[error("near-singular reparameterization (dg/dt = {rate:e})")]
    Reparam { rate: f64 },

    #[error("resonant denominator |1 - exp(i 2 pi nu)| = {0:e}")]
    ResonantDenominator(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{value} left the tabulated range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("at J = {j}: {source}")]
    AtEnergy { j: f64, source: Box<Error> },
}

impl Error {
    /// Energy the error is attached to, when known.
    pub fn energy(&self) -> Option<f64> {
        match self {
            Error::AtEnergy { j, .. } | Error::Elliptic { j, .. } | Error::ChannelAbsent { j, .. } | Error::GridTooCoarse { j, .. } => {
                Some(*j)
            }
            _ => None,
        }
    }

    pub fn channel(&self) -> Option<usize> {
        match self {
            Error::ChannelAbsent { channel, .. } | Error::GridTooCoarse { channel, .. } => Some(*channel),
            Error::AtEnergy { source, .. } => source.channel(),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
