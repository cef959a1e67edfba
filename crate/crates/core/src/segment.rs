//! States, severity bands and the 15 analysed segments.

use std::fmt;
use std::str::FromStr;

use crate::error::ParseError;
use crate::quarter::{Quarter, QuarterRange};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum State {
    CA,
    DE,
    IN,
    ME,
    MT,
    ND,
    OR,
    WA,
}

impl State {
    pub const ALL: [State; 8] = [
        State::CA,
        State::DE,
        State::IN,
        State::ME,
        State::MT,
        State::ND,
        State::OR,
        State::WA,
    ];

    pub fn code(self) -> &'static str {
        match self {
            State::CA => "CA",
            State::DE => "DE",
            State::IN => "IN",
            State::ME => "ME",
            State::MT => "MT",
            State::ND => "ND",
            State::OR => "OR",
            State::WA => "WA",
        }
    }

    /// Accident quarters with complete, unbiased notification data.
    pub fn analysis_window(self) -> QuarterRange {
        let (a, b) = match self {
            State::CA => ((2012, 1), (2021, 4)),
            State::DE => ((2018, 2), (2021, 4)),
            State::IN => ((2014, 1), (2021, 2)),
            State::ME => ((2013, 1), (2020, 2)),
            State::MT => ((2015, 4), (2021, 4)),
            State::ND => ((2019, 1), (2021, 4)),
            State::OR => ((2016, 1), (2021, 4)),
            State::WA => ((2015, 4), (2021, 4)),
        };
        let q = |(y, n): (i32, u8)| Quarter::new(y, n).expect("static quarter");
        QuarterRange::new(q(a), q(b))
    }

    /// Affected-resident count below which the AG need not be notified.
    pub fn notification_threshold(self) -> u64 {
        match self {
            State::CA | State::DE | State::WA => 500,
            State::OR | State::ND => 250,
            State::IN | State::ME | State::MT => 0,
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for State {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        State::ALL
            .into_iter()
            .find(|st| st.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ParseError::State(s.to_string()))
    }
}

/// Number of affected state residents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SeverityBand {
    /// 0–249
    Small,
    /// 250–499
    Medium,
    /// ≥ 250
    AtLeast250,
    /// ≥ 500
    AtLeast500,
}

impl SeverityBand {
    pub fn contains(self, affected: u64) -> bool {
        match self {
            SeverityBand::Small => affected <= 249,
            SeverityBand::Medium => (250..=499).contains(&affected),
            SeverityBand::AtLeast250 => affected >= 250,
            SeverityBand::AtLeast500 => affected >= 500,
        }
    }

    /// Suffix used in segment keys (`IN1`, `IN250`, `OR250`, `CA500`).
    fn key_suffix(self) -> &'static str {
        match self {
            SeverityBand::Small => "1",
            SeverityBand::Medium | SeverityBand::AtLeast250 => "250",
            SeverityBand::AtLeast500 => "500",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SeverityBand::Small => "0-249",
            SeverityBand::Medium => "250-499",
            SeverityBand::AtLeast250 => ">=250",
            SeverityBand::AtLeast500 => ">=500",
        }
    }

    /// A representative affected count inside the band.
    pub fn representative(self) -> u64 {
        match self {
            SeverityBand::Small => 100,
            SeverityBand::Medium => 300,
            SeverityBand::AtLeast250 => 400,
            SeverityBand::AtLeast500 => 1000,
        }
    }
}

/// One of the 15 (state, severity) combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SegmentKey {
    state: State,
    band: SeverityBand,
}

impl SegmentKey {
    pub const ALL: [SegmentKey; 15] = {
        use SeverityBand::*;
        use State::*;
        const fn k(state: State, band: SeverityBand) -> SegmentKey {
            SegmentKey { state, band }
        }
        [
            k(CA, AtLeast500),
            k(IN, Small),
            k(MT, Small),
            k(ME, Small),
            k(WA, AtLeast500),
            k(OR, AtLeast250),
            k(IN, AtLeast500),
            k(IN, Medium),
            k(MT, AtLeast500),
            k(MT, Medium),
            k(ME, AtLeast500),
            k(ME, Medium),
            k(ND, AtLeast500),
            k(ND, Medium),
            k(DE, AtLeast500),
        ]
    };

    pub fn new(state: State, band: SeverityBand) -> Result<Self, ParseError> {
        let key = Self { state, band };
        if Self::ALL.contains(&key) {
            Ok(key)
        } else {
            Err(ParseError::Segment(format!("{state}({})", band.label())))
        }
    }

    pub fn state(self) -> State {
        self.state
    }

    pub fn band(self) -> SeverityBand {
        self.band
    }

    pub fn code(self) -> String {
        format!("{}{}", self.state.code(), self.band.key_suffix())
    }

    /// Segment spec with the state's analysis window.
    pub fn published_window(self) -> SegmentSpec {
        let w = self.state.analysis_window();
        SegmentSpec {
            key: self,
            first_aq: w.first,
            last_aq: w.last,
        }
    }
}

impl fmt::Display for SegmentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

impl FromStr for SegmentKey {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        SegmentKey::ALL
            .into_iter()
            .find(|k| k.code().eq_ignore_ascii_case(t))
            .ok_or_else(|| ParseError::Segment(s.to_string()))
    }
}

/// A segment together with its accident-quarter window.
///
/// The observation cutoff is `last_aq`: a cell (AQ, DQ) is observed when its
/// calendar quarter does not exceed it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentSpec {
    pub key: SegmentKey,
    pub first_aq: Quarter,
    pub last_aq: Quarter,
}

impl SegmentSpec {
    pub fn new(key: SegmentKey, first_aq: Quarter, last_aq: Quarter) -> Self {
        Self {
            key,
            first_aq,
            last_aq,
        }
    }

    pub fn window(&self) -> QuarterRange {
        QuarterRange::new(self.first_aq, self.last_aq)
    }

    pub fn n_aq(&self) -> usize {
        self.window().len()
    }

    /// All 15 segments with their published analysis windows.
    pub fn published_segments() -> Vec<SegmentSpec> {
        SegmentKey::ALL.iter().map(|k| k.published_window()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_round_trip() {
        for k in SegmentKey::ALL {
            assert_eq!(k.code().parse::<SegmentKey>().unwrap(), k);
        }
        assert_eq!(SegmentKey::ALL.len(), 15);
        assert!("CA1".parse::<SegmentKey>().is_err());
    }

    #[test]
    fn unsupported_combination_rejected() {
        assert!(SegmentKey::new(State::CA, SeverityBand::Small).is_err());
        assert!(SegmentKey::new(State::OR, SeverityBand::AtLeast250).is_ok());
    }

    #[test]
    fn band_boundaries() {
        assert!(SeverityBand::Small.contains(249));
        assert!(!SeverityBand::Small.contains(250));
        assert!(SeverityBand::Medium.contains(250));
        assert!(SeverityBand::Medium.contains(499));
        assert!(!SeverityBand::Medium.contains(500));
        assert!(SeverityBand::AtLeast500.contains(500));
        assert!(SeverityBand::AtLeast250.contains(250));
    }

    #[test]
    fn windows_match_published_periods() {
        let ca = "CA500".parse::<SegmentKey>().unwrap().published_window();
        assert_eq!(ca.first_aq.to_string(), "2012Q1");
        assert_eq!(ca.n_aq(), 40);
        let nd = "ND250".parse::<SegmentKey>().unwrap().published_window();
        assert_eq!(nd.first_aq.to_string(), "2019Q1");
        assert_eq!(nd.n_aq(), 12);
        let me = "ME1".parse::<SegmentKey>().unwrap().published_window();
        assert_eq!(me.last_aq.to_string(), "2020Q2");
    }
}
