mod decode;
mod eval;
pub mod gradcheck;
mod synth;
mod train;

pub use decode::{decode, decode_examples, load_checkpoint, DecodeArgs};
pub use eval::{eval, EvalArgs};
pub use gradcheck::{gradcheck, GradcheckArgs};
pub use synth::{synth, SynthArgs};
pub use train::{train, TrainArgs};

use std::path::Path;

use mtlsum::{Error, Result};

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: serde::Serialize>(value: &T, context: &str) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: context.to_string(),
        source,
    })
}
