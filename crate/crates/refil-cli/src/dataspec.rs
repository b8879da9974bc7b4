//! Compact `--data` argument grammar.
//!
//! Forms (paths resolve against `$REFIL_DATA_DIR` when relative):
//!   mnist:IMAGES,LABELS
//!   cifar:FILE[;FILE...]
//!   movielens:PATH[,threshold=5.0]
//!   uniform:dim=784[,size=256][,seed=0]
//!   patterns:c=3,h=32,w=32[,classes=10][,size=512][,seed=0]
//!   smooth:c=3,h=32,w=32[,size=64][,seed=0]
//!   interactions:users=500,movies=500[,size=4096][,seed=0]

use std::collections::BTreeMap;
use std::path::PathBuf;

use refil_core::data::{DatasetSource, SyntheticKind};
use refil_core::error::{Error, Result};

pub const DATA_DIR_ENV: &str = "REFIL_DATA_DIR";

pub const GRAMMAR_HELP: &str = "Dataset spec. Relative paths resolve against $REFIL_DATA_DIR.\n\
Forms:\n\
  mnist:IMAGES,LABELS              IDX image/label files\n\
  cifar:FILE[;FILE...]             CIFAR-10 binary batches\n\
  movielens:PATH[,threshold=5.0]   ratings CSV (userId,movieId,rating[,ts])\n\
  uniform:dim=784[,size=,seed=]    uniform [0,1] vectors\n\
  patterns:c=3,h=32,w=32[,classes=,size=,seed=]  class-pattern images\n\
  smooth:c=3,h=32,w=32[,size=,seed=]             piecewise-smooth scenes\n\
  interactions:users=,movies=[,size=,seed=]      synthetic like/dislike pairs";

fn resolve(path: &str) -> PathBuf {
    let p = PathBuf::from(path);
    if p.is_relative() {
        if let Ok(base) = std::env::var(DATA_DIR_ENV) {
            return PathBuf::from(base).join(p);
        }
    }
    p
}

fn kv_map(body: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for part in body.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| {
            Error::InvalidArgument(format!("expected key=value in data spec, got {part:?}"))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn get_usize(map: &BTreeMap<String, String>, key: &str, default: Option<usize>) -> Result<usize> {
    match (map.get(key), default) {
        (Some(v), _) => v
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad {key}={v}"))),
        (None, Some(d)) => Ok(d),
        (None, None) => Err(Error::InvalidArgument(format!(
            "data spec is missing {key}="
        ))),
    }
}

fn get_u64(map: &BTreeMap<String, String>, key: &str, default: u64) -> Result<u64> {
    match map.get(key) {
        Some(v) => v
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad {key}={v}"))),
        None => Ok(default),
    }
}

pub fn parse(spec: &str) -> Result<DatasetSource> {
    let (kind, body) = spec.split_once(':').ok_or_else(|| {
        Error::InvalidArgument(format!(
            "data spec {spec:?} must look like kind:args (see --help)"
        ))
    })?;
    match kind {
        "mnist" => {
            let (images, labels) = body.split_once(',').ok_or_else(|| {
                Error::InvalidArgument("mnist spec needs IMAGES,LABELS paths".into())
            })?;
            Ok(DatasetSource::MnistIdx {
                images: resolve(images),
                labels: resolve(labels),
            })
        }
        "cifar" => {
            let paths: Vec<PathBuf> = body.split(';').map(resolve).collect();
            if paths.is_empty() {
                return Err(Error::InvalidArgument("cifar spec needs file paths".into()));
            }
            Ok(DatasetSource::Cifar10Binary { paths })
        }
        "movielens" => {
            let (path, threshold) = match body.split_once(',') {
                Some((p, rest)) => {
                    let map = kv_map(rest)?;
                    let t = map
                        .get("threshold")
                        .map(|v| v.parse::<f32>())
                        .transpose()
                        .map_err(|_| Error::InvalidArgument("bad threshold".into()))?
                        .unwrap_or(5.0);
                    (p, t)
                }
                None => (body, 5.0),
            };
            Ok(DatasetSource::MovieLensCsv {
                path: resolve(path),
                like_threshold: threshold,
            })
        }
        "uniform" => {
            let map = kv_map(body)?;
            Ok(DatasetSource::Synthetic {
                kind: SyntheticKind::UniformVectors {
                    dim: get_usize(&map, "dim", None)?,
                },
                size: get_usize(&map, "size", Some(256))?,
                seed: get_u64(&map, "seed", 0)?,
            })
        }
        "patterns" => {
            let map = kv_map(body)?;
            let separation = match map.get("separation") {
                Some(v) => v
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad separation={v}")))?,
                None => 1.0,
            };
            Ok(DatasetSource::Synthetic {
                kind: SyntheticKind::PatternImages {
                    channels: get_usize(&map, "c", Some(3))?,
                    height: get_usize(&map, "h", Some(32))?,
                    width: get_usize(&map, "w", Some(32))?,
                    classes: get_usize(&map, "classes", Some(10))?,
                    separation,
                },
                size: get_usize(&map, "size", Some(512))?,
                seed: get_u64(&map, "seed", 0)?,
            })
        }
        "smooth" => {
            let map = kv_map(body)?;
            Ok(DatasetSource::Synthetic {
                kind: SyntheticKind::SmoothImages {
                    channels: get_usize(&map, "c", Some(3))?,
                    height: get_usize(&map, "h", Some(32))?,
                    width: get_usize(&map, "w", Some(32))?,
                },
                size: get_usize(&map, "size", Some(64))?,
                seed: get_u64(&map, "seed", 0)?,
            })
        }
        "interactions" => {
            let map = kv_map(body)?;
            Ok(DatasetSource::Synthetic {
                kind: SyntheticKind::Interactions {
                    users: get_usize(&map, "users", None)?,
                    movies: get_usize(&map, "movies", None)?,
                },
                size: get_usize(&map, "size", Some(4096))?,
                seed: get_u64(&map, "seed", 0)?,
            })
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown data spec kind {other:?}"
        ))),
    }
}
