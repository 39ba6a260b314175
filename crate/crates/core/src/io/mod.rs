//! Persistence: dataset files, reproducible splits, synthetic logits and
//! JSON artifacts (tuned specs, metric reports, RC curves).

mod artifact;
mod dataset;
mod split;
mod synth;

pub use artifact::{from_json, load_artifact, save_artifact, save_text, to_json, Artifact, FORMAT_VERSION};
pub use dataset::{
    load_dataset, read_csv, read_raw_binary, save_dataset, write_csv, write_raw_binary,
    DatasetFormat, RAW_MAGIC, RAW_VERSION,
};
pub use split::{seeded_rng, split, subsample, Split, SplitSpec};
pub use synth::{generate_synthetic, Distortion, SyntheticModelSpec};

/// Serde adapter writing `None` as the string `"undefined"`.
pub mod undefined {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub const MARKER: &str = "undefined";

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_str(MARKER),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum NumOrMarker {
        Num(f64),
        Marker(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match NumOrMarker::deserialize(d)? {
            NumOrMarker::Num(x) => Ok(Some(x)),
            NumOrMarker::Marker(m) if m == MARKER => Ok(None),
            NumOrMarker::Marker(m) => Err(de::Error::custom(format!(
                "expected a number or \"{MARKER}\", found \"{m}\""
            ))),
        }
    }
}
