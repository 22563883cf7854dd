use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] dcg_tensor::TensorError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("data: {0}")]
    Data(String),

    #[error("config: {0}")]
    Config(String),

    #[error("sequence has {len} points, exceeding the configured maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint architecture mismatch: {0}")]
    ConfigMismatch(String),

    #[error("training diverged: {0} consecutive non-finite losses")]
    Diverged(usize),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("retrieval gallery is empty")]
    EmptyGallery,

    #[error("classifier categories {classifier:?} do not match dataset categories {dataset:?}")]
    CategoryMismatch {
        classifier: Vec<String>,
        dataset: Vec<String>,
    },
}

pub type Result<T> = std::result::Result<T, CoreError>;
