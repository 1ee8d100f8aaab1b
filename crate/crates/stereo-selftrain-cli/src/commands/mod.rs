pub mod ablate;
pub mod analyze;
pub mod eval;
pub mod gen_data;
pub mod pretrain;
pub mod selftrain;

use stereo_selftrain::Error;

/// Classifies an error chain for the exit code: configuration problems
/// (bad config file, missing manifests/paths) exit 2, runtime failures 3.
pub fn is_config_error(err: &anyhow::Error) -> bool {
    for cause in err.chain() {
        if let Some(lib) = cause.downcast_ref::<Error>() {
            return matches!(lib, Error::Config(_) | Error::InvalidArgument(_));
        }
        if cause.is::<toml::de::Error>() {
            return true;
        }
        let msg = cause.to_string();
        if msg.contains("config not found")
            || msg.contains("is malformed")
            || msg.contains("manifest not found")
            || msg.contains("no output directory")
        {
            return true;
        }
    }
    false
}
