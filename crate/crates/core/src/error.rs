use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid: {0}")]
    Grid(String),
    #[error("blocks: {0}")]
    Blocks(String),
    #[error("exterior: {0}")]
    Exterior(String),
    #[error("step: {0}")]
    Step(String),
    #[error("plan: {0}")]
    Plan(String),
    #[error("ball: {0}")]
    Ball(String),
    #[error("resolution: need N >= {required} per axis, grid has N = {actual}")]
    Resolution { required: usize, actual: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
