use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate wall with coincident endpoints {start:?} / {end:?}")]
    DegenerateWall { start: [f64; 2], end: [f64; 2] },
    #[error("region of interest radius must be positive, got {0}")]
    InvalidRoi(f64),
    #[error("wall {0} lies outside the region of interest")]
    WallOutsideRoi(usize),
    #[error("at least one physical anchor is required")]
    NoAnchors,
    #[error("a trajectory needs at least two waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("waypoints {0} and {next} coincide", next = .0 + 1)]
    CoincidentWaypoints(usize),
    #[error("trajectory step length must be positive, got {0}")]
    InvalidStep(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DaError {
    #[error("{which} row {row} has no positive entry")]
    DegenerateInput { which: &'static str, row: usize },
    #[error("message shapes disagree: beta is {beta_rows}x{beta_cols}, xi is {xi_rows}x{xi_cols}")]
    ShapeMismatch {
        beta_rows: usize,
        beta_cols: usize,
        xi_rows: usize,
        xi_cols: usize,
    },
    #[error("negative or non-finite entry in {0}")]
    InvalidEntry(&'static str),
    #[error("enumeration limited to K, M <= {limit}; got K={k}, M={m}")]
    TooLarge { k: usize, m: usize, limit: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("parameter `{name}` out of range: {value}")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("filter diverged at step {step}: all {what} weights vanished ({detail})")]
    Divergence {
        step: usize,
        what: &'static str,
        detail: String,
    },
    #[error("frame has {got} anchors, filter expects {expected}")]
    AnchorCount { expected: usize, got: usize },
    #[error(transparent)]
    Da(#[from] DaError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: u64, msg: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Filter(#[from] FilterError),
}
