pub mod bundle;
pub mod corpus;
pub mod embeddings;
pub mod ensemble;
pub mod forest;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod svm;
pub mod synthetic;
pub mod textproc;
