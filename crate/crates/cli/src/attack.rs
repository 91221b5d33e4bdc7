//! `imukey attack`: rank the top-k guesses for every test record and
//! report the success@k curve against a random-guess baseline. Before
//! evaluating, the model's training manifest (when present next to the
//! model file) is checked so no test user ever overlaps a training
//! user; only the manifest's user id sets are read.

use std::collections::BTreeSet;
use std::io::BufReader;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use imukey_core::passwords::{PasswordKind, APL_SPACE, PIN_SPACE};
use imukey_core::seqmodels::{prepare_input, rank_guesses, AnyModel, K_MAX};
use imukey_core::simwatch::{read_jsonl, DatasetRecord};

use crate::{
    data_err, entry_bounds, manifest_path, sha256_hex, sibling, slice_segment, CliError, CliResult,
};

pub struct AttackArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub k: usize,
    pub out: PathBuf,
    pub test_device: Option<String>,
}

#[derive(Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub rate: f64,
}

/// Report schema consumed by the plot command and the acceptance gate.
#[derive(Serialize, Deserialize)]
pub struct AttackReport {
    pub model: String,
    pub n: usize,
    pub dataset: String,
    pub curve: Vec<CurvePoint>,
    pub baseline: Vec<CurvePoint>,
}

/// The only fields an attack run may take from a training manifest.
/// Everything else in that file is off limits by design, so the guard
/// deserializes into exactly these and drops the rest unread.
#[derive(Deserialize, Default)]
struct ManifestUserSets {
    #[serde(default)]
    train_users: Vec<u32>,
    #[serde(default)]
    val_users: Vec<u32>,
}

fn check_user_disjointness(args: &AttackArgs, records: &[DatasetRecord]) -> CliResult<()> {
    let path = manifest_path(&args.model);
    let text = match std::fs::read_to_string(&path) {
        Ok(text) => text,
        // No manifest, nothing to check against: bare model files are
        // allowed, the guard exists for models this harness trained.
        Err(_) => return Ok(()),
    };
    let sets: ManifestUserSets = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let trained: BTreeSet<u32> = sets
        .train_users
        .iter()
        .chain(&sets.val_users)
        .copied()
        .collect();
    let overlap: Vec<u32> = records
        .iter()
        .map(|r| r.user)
        .filter(|u| trained.contains(u))
        .collect::<BTreeSet<u32>>()
        .into_iter()
        .collect();
    if !overlap.is_empty() {
        return Err(CliError::Data(format!(
            "test users {overlap:?} appear in the model's training manifest; \
             attack evaluation needs held-out users"
        )));
    }
    Ok(())
}

fn model_password_kind(model: &AnyModel) -> CliResult<PasswordKind> {
    match model {
        AnyModel::Seq2Pwd(m) => m
            .classes
            .first()
            .map(|p| p.kind())
            .ok_or_else(|| CliError::Data("model has an empty class list".into())),
        AnyModel::Seq2Dgt(m) => Ok(if m.vocab.eos().is_some() {
            PasswordKind::Apl
        } else {
            PasswordKind::Pin
        }),
    }
}

/// Uniform-guessing success@k over the model's password space: the
/// database for the classifier, the full combination space for the
/// digit decoder.
fn baseline_rate(model: &AnyModel, pkind: PasswordKind, k: usize) -> f64 {
    let space = match model {
        AnyModel::Seq2Pwd(m) => m.classes.len(),
        AnyModel::Seq2Dgt(_) => match pkind {
            PasswordKind::Pin => PIN_SPACE,
            PasswordKind::Apl => APL_SPACE,
        },
    };
    (k as f64 / space as f64).min(1.0)
}

pub fn run(args: &AttackArgs) -> CliResult<()> {
    if args.k == 0 || args.k > K_MAX {
        return Err(CliError::Config(format!(
            "k must be between 1 and {K_MAX}, got {}",
            args.k
        )));
    }
    let model_text = std::fs::read_to_string(&args.model)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.model.display())))?;
    let model = AnyModel::from_json(&model_text).map_err(data_err)?;
    let pkind = model_password_kind(&model)?;

    let data_bytes = std::fs::read(&args.data)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.data.display())))?;
    let mut records = read_jsonl(BufReader::new(&data_bytes[..])).map_err(data_err)?;
    if let Some(device) = &args.test_device {
        records.retain(|r| &r.device == device);
    }
    if records.is_empty() {
        return Err(CliError::Data("no test records".into()));
    }
    for r in &records {
        match &r.password {
            None => {
                return Err(CliError::Data(format!(
                    "record {}: test records must carry their true password",
                    r.id
                )))
            }
            Some(p) if p.kind() != pkind => {
                return Err(CliError::Data(format!(
                    "record {}: {} password against a {} model",
                    r.id,
                    p.kind(),
                    pkind
                )))
            }
            Some(_) => {}
        }
    }
    check_user_disjointness(args, &records)?;

    // Records are independent; output order is fixed by input order.
    let ranks: Vec<Option<usize>> = records
        .par_iter()
        .map(|r| -> CliResult<Option<usize>> {
            let seg = r.to_segment().map_err(data_err)?;
            let (start, end) = entry_bounds(&seg);
            let xs = prepare_input(&slice_segment(&seg, start, end), model.norm())
                .map_err(|e| CliError::Data(format!("record {}: {e}", r.id)))?;
            let guesses = rank_guesses(&model, &xs, args.k)
                .map_err(|e| CliError::Data(format!("record {}: {e}", r.id)))?;
            let truth = r.password.as_ref().expect("checked above");
            Ok(guesses.iter().position(|(p, _)| p == truth).map(|i| i + 1))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let n = ranks.len();
    let curve: Vec<CurvePoint> = (1..=args.k)
        .map(|k| CurvePoint {
            k,
            rate: success_at(&ranks, k),
        })
        .collect();
    let baseline: Vec<CurvePoint> = (1..=args.k)
        .map(|k| CurvePoint {
            k,
            rate: baseline_rate(&model, pkind, k),
        })
        .collect();
    let report = AttackReport {
        model: model.kind_name().to_string(),
        n,
        dataset: sha256_hex(&data_bytes),
        curve,
        baseline,
    };
    write_report(args, &report)?;
    let last = report.curve.last().expect("k >= 1");
    println!(
        "attack {} on {} records: success@1 {:.3}, success@{} {:.3} (baseline {:.5})",
        report.model,
        n,
        report.curve[0].rate,
        last.k,
        last.rate,
        report.baseline.last().expect("k >= 1").rate,
    );
    Ok(())
}

fn write_report(args: &AttackArgs, report: &AttackReport) -> CliResult<()> {
    let json = serde_json::to_string_pretty(report).map_err(data_err)?;
    std::fs::write(&args.out, json + "\n")
        .map_err(|e| CliError::Data(format!("{}: {e}", args.out.display())))?;
    let mut csv = format!("k,{},baseline\n", report.model);
    for (c, b) in report.curve.iter().zip(&report.baseline) {
        csv.push_str(&format!("{},{},{}\n", c.k, c.rate, b.rate));
    }
    std::fs::write(sibling(&args.out, ".csv"), csv)
        .map_err(|e| CliError::Data(format!("report csv: {e}")))?;
    Ok(())
}

/// Success@k over a slice of ranks (1-based; None means the truth never
/// appeared). Factored out for direct testing.
pub fn success_at(ranks: &[Option<usize>], k: usize) -> f64 {
    ranks.iter().filter(|r| matches!(r, Some(rank) if *rank <= k)).count() as f64
        / ranks.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use imukey_core::numerics::SeededRng;
    use imukey_core::passwords::{Password, PasswordDb, Pin};
    use imukey_core::seqmodels::{InputNorm, Seq2PwdHyper, Seq2PwdModel};

    #[test]
    fn success_curve_is_monotone_by_construction() {
        let ranks = [Some(1), Some(3), None, Some(20), Some(2)];
        let mut prev = 0.0;
        for k in 1..=20 {
            let r = success_at(&ranks, k);
            assert!(r >= prev && (0.0..=1.0).contains(&r));
            prev = r;
        }
        assert_eq!(success_at(&ranks, 1), 0.2);
        assert_eq!(success_at(&ranks, 3), 0.6);
        assert_eq!(success_at(&ranks, 20), 0.8);
    }

    #[test]
    fn baseline_is_k_over_database_for_the_classifier() {
        let mut rng = SeededRng::new(1);
        let db = PasswordDb::sample(&mut rng, PasswordKind::Apl, 147, 0.0).unwrap();
        let model = Seq2PwdModel::init(
            Seq2PwdHyper { input_dim: 6, hidden: 4 },
            db.passwords().cloned().collect(),
            InputNorm::identity(6),
            &mut rng,
        )
        .unwrap();
        let model = AnyModel::Seq2Pwd(Box::new(model));
        let b = baseline_rate(&model, PasswordKind::Apl, 20);
        assert!((b - 20.0 / 147.0).abs() < 1e-15);
        assert_eq!(baseline_rate(&model, PasswordKind::Apl, 400), 1.0);
    }

    #[test]
    fn decoder_baseline_spans_the_full_password_space() {
        let mut rng = SeededRng::new(2);
        let dgt = imukey_core::seqmodels::Seq2DgtModel::init(
            imukey_core::seqmodels::Seq2DgtHyper {
                input_dim: 6,
                enc_hidden: 3,
                dec_hidden: 3,
                attn_dim: 2,
                embed_dim: 2,
            },
            imukey_core::seqmodels::Vocab::apl(),
            InputNorm::identity(6),
            &mut rng,
        )
        .unwrap();
        let model = AnyModel::Seq2Dgt(Box::new(dgt));
        assert_eq!(model_password_kind(&model).unwrap(), PasswordKind::Apl);
        let b = baseline_rate(&model, PasswordKind::Apl, 20);
        assert!((b - 20.0 / 389_112.0).abs() < 1e-18);
    }

    #[test]
    fn manifest_guard_reads_only_user_sets() {
        let text = r#"{
            "train_users": [1, 2, 3],
            "val_users": [4],
            "data_sha256": "not even hex",
            "surprise": {"deeply": ["nested", "junk"]}
        }"#;
        let sets: ManifestUserSets = serde_json::from_str(text).unwrap();
        let all: BTreeSet<u32> = sets.train_users.iter().chain(&sets.val_users).copied().collect();
        assert_eq!(all, [1, 2, 3, 4].into_iter().collect());
    }

    #[test]
    fn pin_model_rejects_apl_records_as_data_error() {
        let mut rng = SeededRng::new(3);
        let classes = vec![
            Password::Pin(Pin::new([1, 2, 3, 4]).unwrap()),
            Password::Pin(Pin::new([5, 6, 7, 8]).unwrap()),
        ];
        let model = Seq2PwdModel::init(
            Seq2PwdHyper { input_dim: 6, hidden: 4 },
            classes,
            InputNorm::identity(6),
            &mut rng,
        )
        .unwrap();
        let model = AnyModel::Seq2Pwd(Box::new(model));
        assert_eq!(model_password_kind(&model).unwrap(), PasswordKind::Pin);
    }
}
