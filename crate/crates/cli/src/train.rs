//! `imukey train`: fit a sequence model on a generated dataset with a
//! user-disjoint train/validation split. Writes the serialized best
//! model, a per-epoch loss CSV and a manifest carrying the user id
//! sets, so an attack run can prove its test users were never seen.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use imukey_core::numerics::SeededRng;
use imukey_core::passwords::{Password, PasswordKind};
use imukey_core::seqmodels::{
    AnyModel, InputNorm, Seq2DgtHyper, Seq2DgtModel, Seq2PwdHyper, Seq2PwdModel, Vocab, INPUT_DIMS,
};
use imukey_core::simwatch::{read_jsonl, DatasetRecord, MotionSegment};
use imukey_core::trainer::{parse_kv, train, Dataset, Sample, Target, TrainConfig, TrainError};

use crate::{
    config_err, data_err, entry_bounds, manifest_path, sha256_hex, sibling, slice_segment,
    split_users, write_manifest, CliError, CliResult, TrainManifest,
};

pub struct TrainArgs {
    pub model: String,
    pub data: PathBuf,
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub train_device: Option<String>,
}

/// Training slices are jittered by up to this much per side so the
/// model tolerates the loose boundaries the extraction front-end
/// produces; validation and attack slices stay exact.
const JITTER_MAX_S: f64 = 0.75;

/// Decorrelates the command's own draws (slice jitter, weight init)
/// from the training loop, which reseeds from the same config seed.
const SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// The slice of the dataset manifest training needs: the password
/// database that defines seq2pwd's class order.
#[derive(Deserialize)]
struct DbManifest {
    kind: String,
    db: Vec<Password>,
}

pub fn run(args: &TrainArgs) -> CliResult<()> {
    let config_text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("config {}: {e}", args.config.display())))?;
    let kv = parse_kv(&config_text).map_err(config_err)?;
    let mut tcfg = TrainConfig::from_kv(&kv).map_err(config_err)?;
    if let Some(seed) = args.seed {
        tcfg.seed = seed;
    }
    tcfg.validate().map_err(config_err)?;

    let data_bytes = std::fs::read(&args.data)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.data.display())))?;
    let mut records = read_jsonl(BufReader::new(&data_bytes[..])).map_err(data_err)?;
    if let Some(device) = &args.train_device {
        records.retain(|r| &r.device == device);
    }
    let pkind = uniform_password_kind(&records)?;
    let db = match args.model.as_str() {
        "seq2pwd" => Some(load_db(&args.data, pkind)?),
        "seq2dgt" => None,
        other => {
            return Err(CliError::Config(format!(
                "model kind {other:?} is not \"seq2pwd\" or \"seq2dgt\""
            )))
        }
    };

    let users: BTreeSet<u32> = records.iter().map(|r| r.user).collect();
    let (train_users, val_users) = split_users(&users)?;

    let mut rng = SeededRng::new(tcfg.seed ^ SEED_SALT);
    let (dataset, norm) = build_dataset(&records, &train_users, pkind, db.as_deref(), &mut rng)?;

    let mut model = init_model(&kv, pkind, norm, db, &mut rng)?;
    let report = train(&mut model, &dataset, &tcfg).map_err(|e| match e {
        TrainError::BadConfig(_) => config_err(e),
        other => data_err(other),
    })?;

    std::fs::write(&args.out, model.to_json() + "\n")
        .map_err(|e| CliError::Data(format!("{}: {e}", args.out.display())))?;
    std::fs::write(sibling(&args.out, ".loss.csv"), report.to_csv())
        .map_err(|e| CliError::Data(format!("loss csv: {e}")))?;
    let manifest = TrainManifest {
        command: "train".into(),
        model_kind: args.model.clone(),
        seed: tcfg.seed,
        train_users: train_users.iter().copied().collect(),
        val_users: val_users.iter().copied().collect(),
        n_train: dataset.train.len(),
        n_val: dataset.val.len(),
        best_epoch: report.best_epoch,
        best_val: report.best_val,
        train_device: args.train_device.clone(),
        data_sha256: sha256_hex(&data_bytes),
        config_sha256: sha256_hex(config_text.as_bytes()),
    };
    write_manifest(&manifest_path(&args.out), &manifest)?;
    println!(
        "trained {} on {} train / {} val samples ({}/{} users), best epoch {} val loss {:.4}",
        args.model,
        dataset.train.len(),
        dataset.val.len(),
        train_users.len(),
        val_users.len(),
        report.best_epoch,
        report.best_val,
    );
    Ok(())
}

/// Every record must carry a password of one kind; a mixed or unlabeled
/// file cannot train either model.
fn uniform_password_kind(records: &[DatasetRecord]) -> CliResult<PasswordKind> {
    let mut kind = None;
    for r in records {
        let Some(pwd) = &r.password else {
            return Err(CliError::Data(format!(
                "record {} has no password; training data must be labeled entries",
                r.id
            )));
        };
        match kind {
            None => kind = Some(pwd.kind()),
            Some(k) if k != pwd.kind() => {
                return Err(CliError::Data(format!(
                    "record {}: password kind {} in a {} dataset",
                    r.id,
                    pwd.kind(),
                    k
                )))
            }
            Some(_) => {}
        }
    }
    kind.ok_or_else(|| CliError::Data("dataset holds no records".into()))
}

fn load_db(data_path: &Path, pkind: PasswordKind) -> CliResult<Vec<Password>> {
    let path = manifest_path(data_path);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        CliError::Data(format!(
            "seq2pwd needs the dataset manifest's password database; {}: {e}",
            path.display()
        ))
    })?;
    let manifest: DbManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if manifest.kind != pkind.to_string() {
        return Err(CliError::Data(format!(
            "dataset manifest kind {} does not match record passwords ({pkind})",
            manifest.kind
        )));
    }
    if manifest.db.is_empty() {
        return Err(CliError::Data(format!("{}: empty password database", path.display())));
    }
    Ok(manifest.db)
}

/// Raw (unnormalized) model input for one record: the password-entry
/// span, optionally widened by a random margin per side, resampled to
/// the model rate.
fn raw_rows(
    record: &DatasetRecord,
    jitter: Option<&mut SeededRng>,
) -> CliResult<(MotionSegment, Vec<Vec<f64>>)> {
    let seg = record.to_segment().map_err(data_err)?;
    let (mut start, mut end) = entry_bounds(&seg);
    if let Some(rng) = jitter {
        let max = (JITTER_MAX_S * seg.rate_hz as f64) as usize;
        start = start.saturating_sub((rng.next_f64() * max as f64) as usize);
        end = (end + (rng.next_f64() * max as f64) as usize).min(seg.len());
    }
    let slice = slice_segment(&seg, start, end);
    let rows = imukey_core::seqmodels::prepare_input(&slice, &InputNorm::identity(INPUT_DIMS))
        .map_err(|e| CliError::Data(format!("record {}: {e}", record.id)))?;
    Ok((slice, rows))
}

fn build_dataset(
    records: &[DatasetRecord],
    train_users: &BTreeSet<u32>,
    pkind: PasswordKind,
    db: Option<&[Password]>,
    rng: &mut SeededRng,
) -> CliResult<(Dataset, InputNorm)> {
    let vocab = vocab_for(pkind);
    let target_of = |record: &DatasetRecord| -> CliResult<Target> {
        let pwd = record.password.as_ref().expect("checked by uniform_password_kind");
        match db {
            Some(db) => db
                .iter()
                .position(|p| p == pwd)
                .map(Target::Class)
                .ok_or_else(|| {
                    CliError::Data(format!(
                        "record {}: password is not in the manifest database",
                        record.id
                    ))
                }),
            None => Ok(Target::Symbols(
                vocab.password_to_symbols(pwd).map_err(data_err)?,
            )),
        }
    };

    let mut train_raw = Vec::new();
    let mut val_raw = Vec::new();
    for record in records {
        if train_users.contains(&record.user) {
            let (_, rows) = raw_rows(record, Some(rng))?;
            train_raw.push((rows, target_of(record)?));
        } else {
            let (_, rows) = raw_rows(record, None)?;
            val_raw.push((rows, target_of(record)?));
        }
    }
    let sequences: Vec<Vec<Vec<f64>>> = train_raw.iter().map(|(rows, _)| rows.clone()).collect();
    let norm = InputNorm::fit(&sequences).map_err(data_err)?;

    let finish = |raw: Vec<(Vec<Vec<f64>>, Target)>| -> Vec<Sample> {
        raw.into_iter()
            .map(|(mut rows, target)| {
                for row in &mut rows {
                    norm.apply_row(row);
                }
                Sample { xs: rows, target }
            })
            .collect()
    };
    Ok((
        Dataset {
            train: finish(train_raw),
            val: finish(val_raw),
        },
        norm,
    ))
}

fn vocab_for(pkind: PasswordKind) -> Vocab {
    match pkind {
        PasswordKind::Pin => Vocab::pin(),
        PasswordKind::Apl => Vocab::apl(),
    }
}

/// The model kind follows from the database's presence: classification
/// needs one, digit decoding does not.
fn init_model(
    kv: &BTreeMap<String, String>,
    pkind: PasswordKind,
    norm: InputNorm,
    db: Option<Vec<Password>>,
    rng: &mut SeededRng,
) -> CliResult<AnyModel> {
    match db {
        Some(classes) => {
            let hyper = Seq2PwdHyper {
                input_dim: INPUT_DIMS,
                hidden: crate::kv_get(kv, "hidden", 32)?,
            };
            let model = Seq2PwdModel::init(hyper, classes, norm, rng).map_err(data_err)?;
            Ok(AnyModel::Seq2Pwd(Box::new(model)))
        }
        None => {
            let hyper = Seq2DgtHyper {
                input_dim: INPUT_DIMS,
                enc_hidden: crate::kv_get(kv, "enc_hidden", 32)?,
                dec_hidden: crate::kv_get(kv, "dec_hidden", 32)?,
                attn_dim: crate::kv_get(kv, "attn_dim", 16)?,
                embed_dim: crate::kv_get(kv, "embed_dim", 8)?,
            };
            let model = Seq2DgtModel::init(hyper, vocab_for(pkind), norm, rng).map_err(data_err)?;
            Ok(AnyModel::Seq2Dgt(Box::new(model)))
        }
    }
}
