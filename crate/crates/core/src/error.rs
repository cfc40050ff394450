use thiserror::Error;

pub type Result<T> = std::result::Result<T, HdmError>;

/// Every failure the estimators and the data layer can report.
///
/// The `Display` output always starts with the variant name so the CLI can
/// surface it verbatim.
#[derive(Debug, Error)]
pub enum HdmError {
    #[error("ParseError: row {row}, column {column}: cannot parse {value:?} as a finite number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("MissingValueError: row {row}, column {column}")]
    MissingValue { row: usize, column: String },
    #[error("SchemaError: {0}")]
    Schema(String),
    #[error("DegenerateDesignError: {0}")]
    DegenerateDesign(String),
    #[error("DomainError: {0}")]
    Domain(String),
    #[error("SingularityError: {0}")]
    Singularity(String),
    #[error("DegenerateError: {0}")]
    Degenerate(String),
    #[error("CollinearTargetError: target {0} is fully explained by the controls")]
    CollinearTarget(String),
    #[error("IdentificationError: {0}")]
    Identification(String),
    #[error("WeakIdentificationError: no instruments selected for {0}")]
    WeakIdentification(String),
    #[error("ArmError: {0}")]
    Arm(String),
    #[error("WeakFirstStageError: {0}")]
    WeakFirstStage(String),
    #[error("IoError: {0}")]
    Io(#[from] std::io::Error),
    #[error("CsvError: {0}")]
    Csv(#[from] csv::Error),
}

impl HdmError {
    /// Name of the error kind, e.g. `"SchemaError"`.
    pub fn name(&self) -> &'static str {
        match self {
            HdmError::Parse { .. } => "ParseError",
            HdmError::MissingValue { .. } => "MissingValueError",
            HdmError::Schema(_) => "SchemaError",
            HdmError::DegenerateDesign(_) => "DegenerateDesignError",
            HdmError::Domain(_) => "DomainError",
            HdmError::Singularity(_) => "SingularityError",
            HdmError::Degenerate(_) => "DegenerateError",
            HdmError::CollinearTarget(_) => "CollinearTargetError",
            HdmError::Identification(_) => "IdentificationError",
            HdmError::WeakIdentification(_) => "WeakIdentificationError",
            HdmError::Arm(_) => "ArmError",
            HdmError::WeakFirstStage(_) => "WeakFirstStageError",
            HdmError::Io(_) => "IoError",
            HdmError::Csv(_) => "CsvError",
        }
    }

    /// Input/usage problems as opposed to estimation failures.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            HdmError::Parse { .. }
                | HdmError::MissingValue { .. }
                | HdmError::Schema(_)
                | HdmError::Io(_)
                | HdmError::Csv(_)
        )
    }
}
