use thiserror::Error;

/// Errors surfaced by chart evaluation, meshing, element construction, and solves.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({x}, {y}) lies outside the chart domain {domain}")]
    Domain { x: f64, y: f64, domain: String },

    #[error("singular metric at ({x}, {y}): {reason}")]
    SingularMetric { x: f64, y: f64, reason: String },

    #[error("invalid chart configuration: {0}")]
    InvalidChart(String),

    #[error("mesh parse error: {0}")]
    Parse(String),

    #[error("mesh topology error: {0}")]
    Topology(String),

    #[error("mesh generation failed: {0}")]
    Generation(String),

    #[error("unsupported quadrature order {n}: supported range is {min}..={max}")]
    UnsupportedOrder { n: usize, min: usize, max: usize },

    #[error("degenerate or self-intersecting polygon: {0}")]
    Geometry(String),

    #[error("singular projector system on cell {cell}: condition estimate {cond:.3e}")]
    SingularProjector { cell: usize, cond: f64 },

    #[error("linear solve failed: {0}")]
    Solve(String),

    #[error("assembly failed on cell {cell}: {source}")]
    Assembly {
        cell: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
