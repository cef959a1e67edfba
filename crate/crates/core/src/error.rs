use thiserror::Error;

/// Malformed scalar tokens: quarters, segment keys, dates, axis names.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("invalid quarter label `{0}` (expected YYYYQn)")]
    Quarter(String),
    #[error("unknown segment key `{0}`")]
    Segment(String),
    #[error("unknown state `{0}`")]
    State(String),
    #[error("unknown axis `{0}` (expected AQ, DQ or CQ)")]
    Axis(String),
    #[error("invalid {what} `{value}`")]
    Value { what: &'static str, value: String },
}
