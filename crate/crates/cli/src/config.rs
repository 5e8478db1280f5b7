//! Run configuration: a scale preset, a TOML file layered on top of it, and
//! `--set key=value` overrides layered on top of that.
//!
//! The top-level `seed` is the only seed; every component seed is derived
//! from it, so nested `seed` keys are rejected.

use std::path::Path;

use agf_core::dataset::PhantomConfig;
use agf_core::evaluation::{ExperimentConfig, TsneConfig};
use agf_core::models::{ConditioningMode, GanArch};
use agf_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// Reduced schedules and networks that finish on one CPU core.
    Desk,
    /// Full-size schedules and networks.
    Paper,
}

/// Phantom dataset shape; the seed comes from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSection {
    pub counts: [usize; 3],
    pub two_lesion_fraction: f64,
    pub px_per_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcganSection {
    pub arch: GanArch,
    pub train: TrainConfig,
    pub conditioning: ConditioningMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub scale: Scale,
    pub seed: u64,
    pub folds: usize,
    pub phantom: PhantomSection,
    pub experiment: ExperimentConfig,
    pub acgan: AcganSection,
    pub tsne: TsneConfig,
}

impl AppConfig {
    pub fn preset(scale: Scale) -> Self {
        let experiment = match scale {
            Scale::Desk => ExperimentConfig::desk_scale(),
            Scale::Paper => ExperimentConfig::paper_scale(),
        };
        let acgan = match scale {
            Scale::Desk => AcganSection {
                arch: experiment.gan_arch,
                train: TrainConfig { epochs: 20, max_iterations: Some(60), ..TrainConfig::acgan() },
                conditioning: ConditioningMode::Multiply,
            },
            Scale::Paper => AcganSection { arch: GanArch::default(), train: TrainConfig::acgan(), conditioning: ConditioningMode::Multiply },
        };
        let p = PhantomConfig::default();
        let mut cfg = AppConfig {
            scale,
            seed: 0,
            folds: 3,
            phantom: PhantomSection { counts: p.counts, two_lesion_fraction: p.two_lesion_fraction, px_per_mm: p.px_per_mm },
            experiment,
            acgan,
            tsne: TsneConfig::default(),
        };
        cfg.propagate_seed();
        cfg
    }

    /// Copies the run seed into every component that carries one.
    fn propagate_seed(&mut self) {
        let s = self.seed;
        self.experiment.seed = s;
        self.experiment.plan.seed = s;
        self.experiment.classifier.seed = s;
        self.experiment.gan.seed = s;
        self.acgan.train.seed = s;
        self.tsne.seed = s;
    }

    pub fn phantom_config(&self) -> PhantomConfig {
        PhantomConfig {
            counts: self.phantom.counts,
            two_lesion_fraction: self.phantom.two_lesion_fraction,
            px_per_mm: self.phantom.px_per_mm,
            seed: self.seed,
        }
    }

    /// Builds the effective config: preset → file → overrides. `scale`
    /// from the command line wins over the file's `scale` key.
    pub fn load(file: Option<&Path>, scale: Option<Scale>, overrides: &[String]) -> CliResult<Self> {
        let mut user = Table::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read config file {}: {e}", path.display())))?;
            user = text
                .parse::<Table>()
                .map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message())))?;
        }
        Self::layer(user, scale, overrides)
    }

    /// [`AppConfig::load`] on config text instead of a file.
    pub fn parse(text: &str, scale: Option<Scale>, overrides: &[String]) -> CliResult<Self> {
        let user = text.parse::<Table>().map_err(|e| CliError::config(e.message().to_string()))?;
        Self::layer(user, scale, overrides)
    }

    fn layer(mut user: Table, scale: Option<Scale>, overrides: &[String]) -> CliResult<Self> {
        for o in overrides {
            let (key, value) = parse_override(o)?;
            set_path(&mut user, &key, value)?;
        }
        reject_nested_seeds(&user, "")?;
        let scale = match (scale, user.get("scale")) {
            (Some(s), _) => s,
            (None, Some(v)) => Scale::deserialize(v.clone()).map_err(|e| CliError::config(format!("scale: {e}")))?,
            (None, None) => Scale::Desk,
        };
        user.insert("scale".into(), Value::String(format!("{scale:?}").to_lowercase()));
        let mut base = Value::try_from(Self::preset(scale)).map_err(|e| CliError::Other(format!("preset serialization: {e}")))?;
        merge(&mut base, Value::Table(user));
        let mut cfg: AppConfig = base.try_into().map_err(|e: toml::de::Error| CliError::config(format!("config: {}", e.message())))?;
        cfg.propagate_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.folds < 2 {
            return Err(CliError::config(format!("folds = {} must be at least 2", self.folds)));
        }
        self.experiment.validate()?;
        self.acgan.arch.stages()?;
        self.acgan.train.validate(true)?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn parse_override(o: &str) -> CliResult<(Vec<String>, Value)> {
    let (k, v) = o.split_once('=').ok_or_else(|| CliError::config(format!("override {o:?} is not KEY=VALUE")))?;
    let key: Vec<String> = k.trim().split('.').map(str::to_owned).collect();
    if key.iter().any(String::is_empty) {
        return Err(CliError::config(format!("override key {k:?} has an empty component")));
    }
    let v = v.trim();
    // Anything that is not a TOML literal is taken as a bare string.
    let value = format!("v = {v}").parse::<Table>().ok().and_then(|mut t| t.remove("v")).unwrap_or_else(|| Value::String(v.to_owned()));
    Ok((key, value))
}

fn set_path(table: &mut Table, key: &[String], value: Value) -> CliResult<()> {
    let (last, parents) = key.split_last().expect("non-empty key");
    let mut t = table;
    for p in parents {
        let entry = t.entry(p.clone()).or_insert_with(|| Value::Table(Table::new()));
        t = entry.as_table_mut().ok_or_else(|| CliError::config(format!("{} is not a section", key.join("."))))?;
    }
    t.insert(last.clone(), value);
    Ok(())
}

fn reject_nested_seeds(t: &Table, prefix: &str) -> CliResult<()> {
    for (k, v) in t {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        if !prefix.is_empty() && k == "seed" {
            return Err(CliError::config(format!("{path}: component seeds derive from the top-level `seed`")));
        }
        if let Value::Table(inner) = v {
            reject_nested_seeds(inner, &path)?;
        }
    }
    Ok(())
}

/// Deep-merges `over` into `base`; tables merge key by key, anything else
/// replaces.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, overrides: &[&str]) -> CliResult<AppConfig> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, text).unwrap();
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        AppConfig::load(Some(&p), None, &o)
    }

    #[test]
    fn presets_round_trip_through_toml() {
        for scale in [Scale::Desk, Scale::Paper] {
            let c = AppConfig::preset(scale);
            let back: AppConfig = toml::from_str(&c.to_toml()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn file_and_overrides_layer_on_the_preset() {
        let c = load("seed = 9\n[experiment]\nclassic_sizes = [0, 10]\n", &["experiment.classifier.epochs=3", "tsne.perplexity=5.0"]).unwrap();
        assert_eq!(c.scale, Scale::Desk);
        assert_eq!(c.experiment.classic_sizes, vec![0, 10]);
        assert_eq!(c.experiment.classifier.epochs, 3);
        assert_eq!(c.experiment.classifier.batch_size, 64);
        assert_eq!(c.tsne.perplexity, 5.0);
        assert_eq!((c.seed, c.experiment.seed, c.tsne.seed, c.experiment.plan.seed), (9, 9, 9, 9));
    }

    #[test]
    fn paper_scale_file() {
        let c = load("scale = \"paper\"\n", &[]).unwrap();
        assert_eq!(c.experiment.classic_sizes.len(), 9);
        assert_eq!(c.experiment.plan.total_per_roi(), 480);
    }

    #[test]
    fn unknown_keys_and_nested_seeds_are_config_errors() {
        for (text, o) in [
            ("[experiment]\nclasic_sizes = [0]\n", vec![]),
            ("bogus = 1\n", vec![]),
            ("", vec!["experiment.gan.seed=3"]),
            ("", vec!["experiment.classifier.optimizer.momentm=0.5"]),
            ("[experiment\n", vec![]),
            ("", vec!["folds=1"]),
            ("", vec!["no-equals"]),
        ] {
            let o: Vec<&str> = o;
            assert!(matches!(load(text, &o), Err(CliError::Config(_))), "{text:?} {o:?}");
        }
    }

    #[test]
    fn optional_limits_can_be_set_by_file() {
        let c = load("scale = \"paper\"\n[experiment.classifier]\nmax_iterations = 7\n", &[]).unwrap();
        assert_eq!(c.experiment.classifier.max_iterations, Some(7));
    }

    #[test]
    fn shipped_config_files_match_their_presets() {
        let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for (file, scale) in [("desk_scale.cfg", Scale::Desk), ("paper_scale.cfg", Scale::Paper)] {
            let c = AppConfig::load(Some(&root.join(file)), None, &[]).unwrap();
            assert_eq!(c, AppConfig::preset(scale), "{file}");
        }
    }
}
