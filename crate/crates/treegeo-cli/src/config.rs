//! Run configuration: a line-oriented `key = value` file, every key
//! overridable by a same-named command-line flag.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;

/// All pipeline settings. Numeric defaults are the standard constants: 50 m
/// match threshold, 4 m fusion radius, z-score 3, 3 m camera height, 1 m IDW
/// epsilon.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub municipality: String,
    pub inventory: Option<PathBuf>,
    pub panoramas: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub geocoder_file: Option<PathBuf>,
    pub geocode_cache: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub delimiter: char,
    pub address_column: String,
    pub id_column: Option<String>,
    pub species_column: Option<String>,
    pub lat_column: Option<String>,
    pub lon_column: Option<String>,
    pub max_match_distance_m: f64,
    pub fuse_radius_m: f64,
    pub idw_epsilon_m: f64,
    pub idw_exponent: f64,
    pub zscore_threshold: f64,
    pub camera_height_m: f64,
    pub max_projection_distance_m: f64,
    pub street_filter_m: f64,
    pub correct_tolerance_m: f64,
    pub geocode_retries: u32,
    pub parallelism: usize,
    pub seed: u64,
    pub rooftop_only: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            municipality: "municipality".into(),
            inventory: None,
            panoramas: None,
            detections: None,
            geocoder_file: None,
            geocode_cache: None,
            ground_truth: None,
            out_dir: PathBuf::from("out"),
            delimiter: ',',
            address_column: "address".into(),
            id_column: None,
            species_column: None,
            lat_column: None,
            lon_column: None,
            max_match_distance_m: 50.0,
            fuse_radius_m: 4.0,
            idw_epsilon_m: 1.0,
            idw_exponent: 1.0,
            zscore_threshold: 3.0,
            camera_height_m: 3.0,
            max_projection_distance_m: 50.0,
            street_filter_m: 50.0,
            correct_tolerance_m: 4.0,
            geocode_retries: 2,
            parallelism: 0,
            seed: 0,
            rooftop_only: false,
        }
    }
}

/// Command-line overrides: one flag per config key, spelled exactly like the
/// key.
#[derive(Debug, Clone, Args, Default)]
pub struct Overrides {
    #[arg(
        long,
        global = true,
        value_name = "FILE",
        help = "Config file (key = value lines)"
    )]
    pub config: Option<PathBuf>,

    #[arg(long = "municipality", global = true)]
    pub municipality: Option<String>,
    #[arg(long = "inventory", global = true)]
    pub inventory: Option<PathBuf>,
    #[arg(long = "panoramas", global = true)]
    pub panoramas: Option<PathBuf>,
    #[arg(long = "detections", global = true)]
    pub detections: Option<PathBuf>,
    #[arg(long = "geocoder_file", global = true)]
    pub geocoder_file: Option<PathBuf>,
    #[arg(long = "geocode_cache", global = true)]
    pub geocode_cache: Option<PathBuf>,
    #[arg(long = "ground_truth", global = true)]
    pub ground_truth: Option<PathBuf>,
    #[arg(long = "out_dir", global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long = "delimiter", global = true)]
    pub delimiter: Option<char>,
    #[arg(long = "address_column", global = true)]
    pub address_column: Option<String>,
    #[arg(long = "id_column", global = true)]
    pub id_column: Option<String>,
    #[arg(long = "species_column", global = true)]
    pub species_column: Option<String>,
    #[arg(long = "lat_column", global = true)]
    pub lat_column: Option<String>,
    #[arg(long = "lon_column", global = true)]
    pub lon_column: Option<String>,
    #[arg(long = "max_match_distance_m", global = true)]
    pub max_match_distance_m: Option<f64>,
    #[arg(long = "fuse_radius_m", global = true)]
    pub fuse_radius_m: Option<f64>,
    #[arg(long = "idw_epsilon_m", global = true)]
    pub idw_epsilon_m: Option<f64>,
    #[arg(long = "idw_exponent", global = true)]
    pub idw_exponent: Option<f64>,
    #[arg(long = "zscore_threshold", global = true)]
    pub zscore_threshold: Option<f64>,
    #[arg(long = "camera_height_m", global = true)]
    pub camera_height_m: Option<f64>,
    #[arg(long = "max_projection_distance_m", global = true)]
    pub max_projection_distance_m: Option<f64>,
    #[arg(long = "street_filter_m", global = true)]
    pub street_filter_m: Option<f64>,
    #[arg(long = "correct_tolerance_m", global = true)]
    pub correct_tolerance_m: Option<f64>,
    #[arg(long = "geocode_retries", global = true)]
    pub geocode_retries: Option<u32>,
    #[arg(long = "parallelism", global = true)]
    pub parallelism: Option<usize>,
    #[arg(long = "seed", global = true)]
    pub seed: Option<u64>,
    #[arg(long = "rooftop_only", global = true)]
    pub rooftop_only: Option<bool>,
}

impl RunConfig {
    /// File config first, then flag overrides.
    pub fn resolve(overrides: &Overrides) -> Result<Self> {
        let mut config = match &overrides.config {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        config.apply(overrides);
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut config = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| {
                anyhow!("config parse error at line {lineno}: expected 'key = value'")
            })?;
            let key = key.trim();
            let value = value.trim();
            config
                .set(key, value)
                .with_context(|| format!("config error at line {lineno}"))?;
        }
        Ok(config)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| anyhow!("invalid value '{value}' for key '{key}'"))
        }
        match key {
            "municipality" => self.municipality = value.to_string(),
            "inventory" => self.inventory = Some(value.into()),
            "panoramas" => self.panoramas = Some(value.into()),
            "detections" => self.detections = Some(value.into()),
            "geocoder_file" => self.geocoder_file = Some(value.into()),
            "geocode_cache" => self.geocode_cache = Some(value.into()),
            "ground_truth" => self.ground_truth = Some(value.into()),
            "out_dir" => self.out_dir = value.into(),
            "delimiter" => {
                let mut chars = value.chars();
                self.delimiter = match (chars.next(), chars.next()) {
                    (Some(c), None) => c,
                    _ => bail!("delimiter must be a single character, got '{value}'"),
                };
            }
            "address_column" => self.address_column = value.to_string(),
            "id_column" => self.id_column = Some(value.to_string()),
            "species_column" => self.species_column = Some(value.to_string()),
            "lat_column" => self.lat_column = Some(value.to_string()),
            "lon_column" => self.lon_column = Some(value.to_string()),
            "max_match_distance_m" => self.max_match_distance_m = num(key, value)?,
            "fuse_radius_m" => self.fuse_radius_m = num(key, value)?,
            "idw_epsilon_m" => self.idw_epsilon_m = num(key, value)?,
            "idw_exponent" => self.idw_exponent = num(key, value)?,
            "zscore_threshold" => self.zscore_threshold = num(key, value)?,
            "camera_height_m" => self.camera_height_m = num(key, value)?,
            "max_projection_distance_m" => self.max_projection_distance_m = num(key, value)?,
            "street_filter_m" => self.street_filter_m = num(key, value)?,
            "correct_tolerance_m" => self.correct_tolerance_m = num(key, value)?,
            "geocode_retries" => self.geocode_retries = num(key, value)?,
            "parallelism" => self.parallelism = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "rooftop_only" => self.rooftop_only = num(key, value)?,
            other => bail!("unknown config key '{other}'"),
        }
        Ok(())
    }

    fn apply(&mut self, o: &Overrides) {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = &o.$field { self.$field = v.clone(); })*
            };
        }
        macro_rules! take_opt {
            ($($field:ident),*) => {
                $(if let Some(v) = &o.$field { self.$field = Some(v.clone()); })*
            };
        }
        take!(municipality, out_dir, delimiter, address_column);
        take_opt!(
            inventory,
            panoramas,
            detections,
            geocoder_file,
            geocode_cache,
            ground_truth,
            id_column,
            species_column,
            lat_column,
            lon_column
        );
        macro_rules! take_copy {
            ($($field:ident),*) => {
                $(if let Some(v) = o.$field { self.$field = v; })*
            };
        }
        take_copy!(
            max_match_distance_m,
            fuse_radius_m,
            idw_epsilon_m,
            idw_exponent,
            zscore_threshold,
            camera_height_m,
            max_projection_distance_m,
            street_filter_m,
            correct_tolerance_m,
            geocode_retries,
            parallelism,
            seed,
            rooftop_only
        );
    }

    /// Numeric parameter defaults, used by the documentation consistency
    /// check.
    pub fn parameter_defaults() -> Vec<(&'static str, f64)> {
        let d = Self::default();
        vec![
            ("max_match_distance_m", d.max_match_distance_m),
            ("fuse_radius_m", d.fuse_radius_m),
            ("idw_epsilon_m", d.idw_epsilon_m),
            ("idw_exponent", d.idw_exponent),
            ("zscore_threshold", d.zscore_threshold),
            ("camera_height_m", d.camera_height_m),
            ("max_projection_distance_m", d.max_projection_distance_m),
            ("street_filter_m", d.street_filter_m),
            ("correct_tolerance_m", d.correct_tolerance_m),
            ("geocode_retries", d.geocode_retries as f64),
        ]
    }

    pub fn cache_path(&self) -> PathBuf {
        self.geocode_cache
            .clone()
            .unwrap_or_else(|| self.out_dir.join("geocode_cache.tsv"))
    }

    pub fn eval_params(&self) -> treegeo::evaluate::EvalParams {
        treegeo::evaluate::EvalParams {
            wrong_threshold_m: self.max_match_distance_m,
            detected_radius_m: self.max_match_distance_m,
            correct_tolerance_m: self.correct_tolerance_m,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_pipeline_constants() {
        let c = RunConfig::default();
        assert_eq!(c.max_match_distance_m, 50.0);
        assert_eq!(c.fuse_radius_m, 4.0);
        assert_eq!(c.zscore_threshold, 3.0);
        assert_eq!(c.camera_height_m, 3.0);
        assert_eq!(c.idw_epsilon_m, 1.0);
    }

    #[test]
    fn unknown_key_names_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        std::fs::write(&path, "max_match_distance_m = 40\nbogus_key = 1\n").unwrap();
        let err = RunConfig::from_file(&path).unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("bogus_key"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn parse_error_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        std::fs::write(&path, "# comment\nmax_match_distance_m 40\n").unwrap();
        let err = RunConfig::from_file(&path).unwrap_err();
        assert!(format!("{err:#}").contains("line 2"));
    }

    #[test]
    fn file_values_and_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        std::fs::write(
            &path,
            "municipality = paloalto # trailing comment\nfuse_radius_m = 5.5\nseed = 42\n",
        )
        .unwrap();
        let c = RunConfig::from_file(&path).unwrap();
        assert_eq!(c.municipality, "paloalto");
        assert_eq!(c.fuse_radius_m, 5.5);
        assert_eq!(c.seed, 42);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        std::fs::write(&path, "seed = 1\nfuse_radius_m = 2\n").unwrap();
        let overrides = Overrides {
            config: Some(path),
            seed: Some(7),
            ..Default::default()
        };
        let c = RunConfig::resolve(&overrides).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.fuse_radius_m, 2.0);
    }
}
