//! Layered run configuration: profile defaults, then a TOML file, then
//! `section.key=value` overrides. The resolved config is written as
//! `config.toml` into every stage output directory.

use std::path::Path;

use geomatch_core::bench::GenSpec;
use geomatch_core::gcfeat::GcConfig;
use geomatch_core::spatial::{self, Rect};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::sha256_hex;

pub const DEFAULT_SEED: u64 = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Two-layer, 64-wide models sized for a laptop run in minutes.
    Desk,
    /// Four-layer, 256-wide encoders with large batches and long schedules.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// Left, bottom, right, top in degrees.
    pub bounds: [f64; 4],
    pub roads: usize,
    pub regions: usize,
    pub pois: usize,
    pub queries: usize,
    pub query_mix: [f64; 3],
    pub collision_rate: f64,
    pub chain_size: usize,
    pub chain_separation_m: f64,
    pub near_fraction: f64,
    pub split: [f64; 3],
    pub train_candidates: usize,
    pub eval_candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GcSection {
    pub k: u32,
    pub n_grid: u32,
    pub n_max: usize,
    pub radius_m: f64,
    pub line_eps_m: f64,
    pub id_buckets: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoSection {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub mask_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmSection {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub max_seq: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub mask_prob: f64,
    /// Also pre-train on training queries paired with their gold POI's GC.
    pub train_queries: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// Start from the multi-modal pre-training checkpoint.
    Mm,
    /// Start from the bi-encoder fine-tuned on the same variant.
    Bi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Candidates sampled per training query, gold included; 0 keeps all.
    pub train_candidates: usize,
    /// Dev queries scored for checkpoint selection; 0 uses all.
    pub select_queries: usize,
    pub warmup_steps: usize,
    pub linear_decay: bool,
    pub init: Init,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub bench: BenchConfig,
    pub gc: GcSection,
    pub geo: GeoSection,
    pub mm: MmSection,
    pub bi: FinetuneSection,
    pub cross: FinetuneSection,
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        let spec = GenSpec::default();
        let bench = BenchConfig {
            bounds: [spec.bounds.left, spec.bounds.bottom, spec.bounds.right, spec.bounds.top],
            roads: spec.roads,
            regions: spec.regions,
            pois: spec.pois,
            queries: spec.queries,
            query_mix: spec.query_mix,
            collision_rate: spec.collision_rate,
            chain_size: spec.chain_size,
            chain_separation_m: spec.chain_separation_m,
            near_fraction: spec.near_fraction,
            split: spec.split,
            train_candidates: spec.train_candidates,
            eval_candidates: spec.eval_candidates,
        };
        let gc = |id_buckets| GcSection {
            k: GcConfig::DEFAULT_K,
            n_grid: GcConfig::DEFAULT_N_GRID,
            n_max: spatial::DEFAULT_NEARBY_N,
            radius_m: spatial::DEFAULT_RADIUS_M,
            line_eps_m: spatial::DEFAULT_LINE_EPS_M,
            id_buckets,
        };
        match profile {
            Profile::Desk => Self {
                profile,
                seed: DEFAULT_SEED,
                bench,
                gc: gc(4093),
                geo: GeoSection {
                    layers: 2,
                    hidden: 64,
                    heads: 4,
                    ffn_mult: 2,
                    epochs: 3,
                    batch_size: 32,
                    lr: 1e-3,
                    weight_decay: 0.02,
                    mask_prob: 0.15,
                },
                mm: MmSection {
                    layers: 2,
                    hidden: 64,
                    heads: 4,
                    ffn_mult: 2,
                    max_seq: 64,
                    epochs: 30,
                    batch_size: 16,
                    lr: 1e-3,
                    weight_decay: 0.02,
                    mask_prob: 0.15,
                    train_queries: true,
                },
                bi: FinetuneSection {
                    epochs: 8,
                    batch_size: 4,
                    lr: 1e-3,
                    weight_decay: 0.02,
                    train_candidates: 8,
                    select_queries: 200,
                    warmup_steps: 100,
                    linear_decay: true,
                    init: Init::Mm,
                },
                cross: FinetuneSection {
                    epochs: 6,
                    batch_size: 4,
                    lr: 5e-4,
                    weight_decay: 0.02,
                    train_candidates: 4,
                    select_queries: 100,
                    warmup_steps: 100,
                    linear_decay: true,
                    init: Init::Bi,
                },
            },
            Profile::Full => {
                let ft = |batch_size| FinetuneSection {
                    epochs: 10,
                    batch_size,
                    lr: 5e-5,
                    weight_decay: 0.02,
                    train_candidates: 20,
                    select_queries: 0,
                    warmup_steps: 0,
                    linear_decay: false,
                    init: Init::Mm,
                };
                Self {
                    profile,
                    seed: DEFAULT_SEED,
                    bench,
                    gc: gc(GcConfig::DEFAULT_ID_BUCKETS),
                    geo: GeoSection {
                        layers: 4,
                        hidden: 256,
                        heads: 4,
                        ffn_mult: 4,
                        epochs: 30,
                        batch_size: 512,
                        lr: 1e-4,
                        weight_decay: 0.02,
                        mask_prob: 0.15,
                    },
                    mm: MmSection {
                        layers: 4,
                        hidden: 256,
                        heads: 4,
                        ffn_mult: 4,
                        max_seq: 128,
                        epochs: 10,
                        batch_size: 512,
                        lr: 5e-5,
                        weight_decay: 0.02,
                        mask_prob: 0.15,
                        train_queries: false,
                    },
                    bi: ft(56),
                    cross: ft(24),
                }
            }
        }
    }

    /// Profile defaults, then `file`, then each `section.key=value` in `sets`.
    /// A `profile` key in the file or the overrides picks the defaults.
    pub fn resolve(file: Option<&Path>, sets: &[String]) -> Result<Self> {
        let file_table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Usage(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        let mut overrides = toml::Table::new();
        for s in sets {
            let (key, raw) = s
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("override {s:?} is not key=value")))?;
            let value = format!("v = {raw}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            insert_path(&mut overrides, key.trim(), value)?;
        }
        let profile_value = overrides.get("profile").or_else(|| file_table.get("profile")).cloned();
        let profile = match profile_value {
            Some(v) => v.try_into::<Profile>().map_err(|e| Error::Config(format!("profile: {e}")))?,
            None => Profile::Desk,
        };
        let mut merged = toml::Table::try_from(Self::profile(profile)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, file_table);
        merge(&mut merged, overrides);
        let cfg: Self = toml::Value::Table(merged).try_into().map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.gen_spec().validate()?;
        if self.bi.init == Init::Bi {
            return Err(Error::Config("bi.init cannot be \"bi\"".into()));
        }
        for (name, s) in [("bi", &self.bi), ("cross", &self.cross)] {
            if s.epochs == 0 || s.batch_size == 0 {
                return Err(Error::Config(format!("{name} needs epochs and a positive batch size")));
            }
        }
        if self.geo.batch_size == 0 || self.mm.batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn gen_spec(&self) -> GenSpec {
        let b = &self.bench;
        GenSpec {
            bounds: Rect {
                left: b.bounds[0],
                bottom: b.bounds[1],
                right: b.bounds[2],
                top: b.bounds[3],
            },
            roads: b.roads,
            regions: b.regions,
            pois: b.pois,
            queries: b.queries,
            query_mix: b.query_mix,
            collision_rate: b.collision_rate,
            chain_size: b.chain_size,
            chain_separation_m: b.chain_separation_m,
            near_fraction: b.near_fraction,
            split: b.split,
            train_candidates: b.train_candidates,
            eval_candidates: b.eval_candidates,
            seed: self.seed,
        }
    }

    pub fn gc_config(&self, map_bounds: Rect) -> GcConfig {
        GcConfig {
            k: self.gc.k,
            n_grid: self.gc.n_grid,
            map_bounds,
            n_max: self.gc.n_max,
            radius: self.gc.radius_m,
            line_eps: self.gc.line_eps_m,
            id_buckets: self.gc.id_buckets,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::to_toml`].
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())[..16].to_string()
    }
}

fn insert_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    match key.split_once('.') {
        None => {
            table.insert(key.to_string(), value);
            Ok(())
        }
        Some((head, rest)) => {
            let sub = table
                .entry(head.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            match sub {
                toml::Value::Table(t) => insert_path(t, rest, value),
                _ => Err(Error::Usage(format!("override key {key:?} conflicts with a value"))),
            }
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_defaults_round_trip_through_toml() {
        let cfg = RunConfig::profile(Profile::Desk);
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.seed, 17);
        assert_eq!(cfg.gen_spec(), GenSpec::default());
        assert_eq!(RunConfig::resolve(None, &[]).unwrap(), cfg);
    }

    #[test]
    fn layers_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 5\n[bi]\nepochs = 2\nlr = 0.01\n").unwrap();
        let cfg = RunConfig::resolve(Some(&path), &["bi.lr=0.5".into(), "geo.hidden=32".into()]).unwrap();
        assert_eq!((cfg.seed, cfg.bi.epochs, cfg.bi.lr, cfg.geo.hidden), (5, 2, 0.5, 32));
        assert_eq!(cfg.cross, RunConfig::profile(Profile::Desk).cross);
    }

    #[test]
    fn full_profile_selected_by_override() {
        let cfg = RunConfig::resolve(None, &["profile=full".into()]).unwrap();
        assert_eq!((cfg.geo.layers, cfg.geo.hidden, cfg.gc.id_buckets), (4, 256, 50_021));
        assert_eq!((cfg.bi.batch_size, cfg.cross.batch_size), (56, 24));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_errors() {
        assert!(RunConfig::resolve(None, &["bi.epoch=3".into()]).is_err());
        assert!(RunConfig::resolve(None, &["bench.collision_rate=1.5".into()]).is_err());
        assert!(RunConfig::resolve(None, &["bi.init=bi".into()]).is_err());
        let missing = RunConfig::resolve(Some(Path::new("/nonexistent/run.toml")), &[]).unwrap_err();
        assert_eq!(missing.exit_code(), 2);
        assert!(missing.to_string().contains("/nonexistent/run.toml"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::profile(Profile::Desk);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 18;
        assert_ne!(a.hash(), b.hash());
    }
}
