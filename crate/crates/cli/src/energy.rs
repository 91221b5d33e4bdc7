//! `imukey energy`: compare sensing strategies on the same labeled
//! episodes. Constant-rate rows resample each episode to 50/100/200 Hz
//! and extract the password span directly, isolating what the sampling
//! rate costs in accuracy; the adaptive row runs the full duty-cycled
//! front-end (detector, smoother, identifier) and its energy ledger.
//!
//! Episodes are split user-disjointly: the front-end trains on the
//! first 80% of users and every strategy is scored on the held-out
//! rest, so detector quality is measured on wearers it never saw.

use std::collections::BTreeSet;
use std::io::BufReader;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use imukey_core::frontend::{
    adaptive_run, train_frontend, AdaptiveConfig, CostTable, Smoother,
};
use imukey_core::numerics::SeededRng;
use imukey_core::seqmodels::{prepare_input, rank_guesses, AnyModel};
use imukey_core::simwatch::{read_jsonl, resample, DatasetRecord, MotionSegment};

use crate::{
    config_err, data_err, entry_bounds, load_kv, slice_segment, split_users, CliError, CliResult,
};

pub struct EnergyArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

const CONSTANT_RATES: [u32; 3] = [50, 100, 200];
const ACCURACY_K: usize = 10;

#[derive(Serialize, Deserialize)]
pub struct EnergySweepRow {
    pub strategy: String,
    pub energy_pct_per_hr: f64,
    pub accuracy_at_10: f64,
}

#[derive(Serialize, Deserialize)]
pub struct EnergyReport {
    pub model: String,
    pub episodes: usize,
    pub entries: usize,
    pub rows: Vec<EnergySweepRow>,
}

/// Cost rows come from `cost.<sensor>.<rate>` config keys. A config
/// with no cost rows means the calibrated table; a partial table is an
/// error as soon as a sweep rate is missing.
fn cost_table(kv: &std::collections::BTreeMap<String, String>) -> CliResult<CostTable> {
    let pairs: Vec<(String, f64)> = kv
        .iter()
        .filter(|(k, _)| k.starts_with("cost."))
        .map(|(k, v)| {
            v.parse::<f64>()
                .map(|x| (k.clone(), x))
                .map_err(|_| CliError::Config(format!("config key {k}: bad value {v:?}")))
        })
        .collect::<CliResult<_>>()?;
    if pairs.is_empty() {
        return Ok(CostTable::default_calibrated());
    }
    let table = CostTable::from_config_pairs(&pairs).map_err(config_err)?;
    for rate in CONSTANT_RATES {
        table.constant_rate_cost(rate).map_err(config_err)?;
    }
    for mode in [
        imukey_core::frontend::SensingMode::Passive,
        imukey_core::frontend::SensingMode::Monitoring,
        imukey_core::frontend::SensingMode::Extraction,
    ] {
        table.mode_cost_per_hr(mode).map_err(config_err)?;
    }
    Ok(table)
}

fn adaptive_config(kv: &std::collections::BTreeMap<String, String>) -> CliResult<AdaptiveConfig> {
    let d = AdaptiveConfig::default();
    Ok(AdaptiveConfig {
        trigger_delta_g: crate::kv_get(kv, "trigger_delta_g", d.trigger_delta_g)?,
        monitor_timeout_s: crate::kv_get(kv, "monitor_timeout_s", d.monitor_timeout_s)?,
        min_run_frames: crate::kv_get(kv, "min_run_frames", d.min_run_frames)?,
        stop_after_negatives: crate::kv_get(kv, "stop_after_negatives", d.stop_after_negatives)?,
    })
}

/// True when the model's top guesses for this segment include the
/// truth.
fn hits(model: &AnyModel, seg: &MotionSegment, truth: &imukey_core::passwords::Password) -> CliResult<bool> {
    let xs = prepare_input(seg, model.norm()).map_err(data_err)?;
    let guesses = rank_guesses(model, &xs, ACCURACY_K).map_err(data_err)?;
    Ok(guesses.iter().any(|(p, _)| p == truth))
}

pub fn run(args: &EnergyArgs) -> CliResult<()> {
    let kv = load_kv(&args.config)?;
    let table = cost_table(&kv)?;
    let acfg = adaptive_config(&kv)?;
    let seed = args.seed.map(Ok).unwrap_or_else(|| crate::kv_get(&kv, "seed", 0u64))?;

    let model_text = std::fs::read_to_string(&args.model)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.model.display())))?;
    let model = AnyModel::from_json(&model_text).map_err(data_err)?;

    let data_bytes = std::fs::read(&args.data)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.data.display())))?;
    let records = read_jsonl(BufReader::new(&data_bytes[..])).map_err(data_err)?;
    if records.is_empty() {
        return Err(CliError::Data("no episodes".into()));
    }

    let users: BTreeSet<u32> = records.iter().map(|r| r.user).collect();
    let (train_users, _) = split_users(&users)?;
    let mut frontend_train = Vec::new();
    let mut eval: Vec<(&DatasetRecord, MotionSegment)> = Vec::new();
    for r in &records {
        let seg = r.to_segment().map_err(data_err)?;
        if train_users.contains(&r.user) {
            frontend_train.push(seg);
        } else {
            eval.push((r, seg));
        }
    }
    let entries = eval.iter().filter(|(r, _)| r.password.is_some()).count();
    if entries == 0 {
        return Err(CliError::Data(
            "held-out episodes contain no password entries to score".into(),
        ));
    }

    let mut rows = Vec::new();
    for rate in CONSTANT_RATES {
        let mut hit = 0usize;
        for (r, seg) in &eval {
            let Some(truth) = &r.password else { continue };
            let (start, end) = entry_bounds(seg);
            let at_rate = resample(&slice_segment(seg, start, end), rate).map_err(data_err)?;
            hit += hits(&model, &at_rate, truth)? as usize;
        }
        rows.push(EnergySweepRow {
            strategy: format!("const-{rate}"),
            energy_pct_per_hr: table.constant_rate_cost(rate).map_err(config_err)?,
            accuracy_at_10: hit as f64 / entries as f64,
        });
    }

    let mut rng = SeededRng::new(seed);
    let (detector, identifier) = train_frontend(&frontend_train, &mut rng).map_err(data_err)?;
    let smoother = Smoother::hmm_default();
    let mut hit = 0usize;
    let mut pct = 0.0;
    let mut seconds = 0.0;
    for (r, seg) in &eval {
        let out = adaptive_run(seg, &detector, &smoother, &identifier, &table, &acfg)
            .map_err(data_err)?;
        pct += out.ledger.total_pct();
        seconds += seg.duration_s();
        if let Some(truth) = &r.password {
            let mut any = false;
            for c in out.candidates.iter().filter(|c| c.accepted) {
                if hits(&model, &c.segment, truth)? {
                    any = true;
                    break;
                }
            }
            hit += any as usize;
        }
    }
    rows.push(EnergySweepRow {
        strategy: "adaptive".into(),
        energy_pct_per_hr: pct * 3600.0 / seconds,
        accuracy_at_10: hit as f64 / entries as f64,
    });

    let report = EnergyReport {
        model: model.kind_name().to_string(),
        episodes: eval.len(),
        entries,
        rows,
    };
    let json = serde_json::to_string_pretty(&report).map_err(data_err)?;
    std::fs::write(&args.out, json + "\n")
        .map_err(|e| CliError::Data(format!("{}: {e}", args.out.display())))?;
    for row in &report.rows {
        println!(
            "{:<10} {:>6.2} %/hr  accuracy@10 {:.3}",
            row.strategy, row.energy_pct_per_hr, row.accuracy_at_10
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn kv(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn empty_config_means_the_calibrated_table() {
        let table = cost_table(&kv(&[("seed", "3")])).unwrap();
        let reference = CostTable::default_calibrated();
        for rate in CONSTANT_RATES {
            assert_eq!(
                table.constant_rate_cost(rate).unwrap(),
                reference.constant_rate_cost(rate).unwrap()
            );
        }
    }

    #[test]
    fn partial_cost_table_is_a_config_error() {
        // accel 50 alone: gyro.50 plus every other sweep rate missing.
        let err = cost_table(&kv(&[("cost.accel.50", "0.6")])).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn malformed_cost_keys_and_values_are_config_errors() {
        for pairs in [
            vec![("cost.accel.50", "cheap")],
            vec![("cost.magnetometer.50", "1.0")],
            vec![("cost.accel", "1.0")],
        ] {
            let err = cost_table(&kv(&pairs)).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{pairs:?}");
        }
    }

    #[test]
    fn full_cost_table_from_config_overrides_the_default() {
        let table = cost_table(&kv(&[
            ("cost.accel.10", "1.0"),
            ("cost.accel.40", "1.1"),
            ("cost.accel.50", "0.5"),
            ("cost.gyro.50", "1.0"),
            ("cost.accel.100", "1.0"),
            ("cost.gyro.100", "2.0"),
            ("cost.accel.200", "1.5"),
            ("cost.gyro.200", "4.0"),
        ]))
        .unwrap();
        assert_eq!(table.constant_rate_cost(50).unwrap(), 1.5);
        assert_eq!(table.constant_rate_cost(200).unwrap(), 5.5);
    }

    #[test]
    fn adaptive_knobs_fall_back_to_defaults() {
        let cfg = adaptive_config(&kv(&[("trigger_delta_g", "0.4")])).unwrap();
        assert_eq!(cfg.trigger_delta_g, 0.4);
        let d = AdaptiveConfig::default();
        assert_eq!(cfg.monitor_timeout_s, d.monitor_timeout_s);
        assert_eq!(cfg.min_run_frames, d.min_run_frames);
        assert_eq!(cfg.stop_after_negatives, d.stop_after_negatives);
    }
}
