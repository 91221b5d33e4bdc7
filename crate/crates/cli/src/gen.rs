//! `imukey gen`: synthesize a labeled motion dataset from a key-value
//! config. Every record is one episode by one simulated wearer; the
//! companion manifest freezes the password database, the user ids and
//! the content hash, which later stages rely on.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use imukey_core::numerics::SeededRng;
use imukey_core::passwords::{Password, PasswordDb, PasswordKind};
use imukey_core::simwatch::{
    add_noise_to_snr, compose_episode, write_jsonl, ActivityKind, DatasetRecord, DeviceProfile,
    EpisodeAction, GeneratorConfig, UserProfile, SUPPORTED_RATES,
};

use crate::{
    config_err, data_err, load_kv, manifest_path, sha256_hex, write_manifest, CliError, CliResult,
    GenManifest,
};

pub struct GenArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

/// Record layout: `entry` episodes hold exactly one password entry with
/// its approach and retreat; `episode` style embeds the entry (or
/// nothing, for background records) in stretches of everyday activity,
/// which is what the sensing front-end is evaluated on.
#[derive(Clone, Copy, PartialEq)]
enum Style {
    Entry,
    Episode,
}

struct GenConfig {
    kind: PasswordKind,
    style: Style,
    db_size: usize,
    db_seed: u64,
    db_skew: f64,
    users: u32,
    user_base: u32,
    passwords_per_user: usize,
    repetitions: usize,
    background_per_user: usize,
    snr_db: f64,
    device: DeviceProfile,
    rate_hz: u32,
    seed: u64,
}

impl GenConfig {
    fn from_kv(kv: &BTreeMap<String, String>, seed_override: Option<u64>) -> CliResult<Self> {
        let kind = match kv.get("kind").map(String::as_str) {
            None | Some("apl") => PasswordKind::Apl,
            Some("pin") => PasswordKind::Pin,
            Some(other) => {
                return Err(CliError::Config(format!(
                    "config key kind: {other:?} is not \"pin\" or \"apl\""
                )))
            }
        };
        let style = match kv.get("style").map(String::as_str) {
            None | Some("entry") => Style::Entry,
            Some("episode") => Style::Episode,
            Some(other) => {
                return Err(CliError::Config(format!(
                    "config key style: {other:?} is not \"entry\" or \"episode\""
                )))
            }
        };
        let device_name = kv.get("device").map(String::as_str).unwrap_or("sw3");
        let device = DeviceProfile::preset(device_name).ok_or_else(|| {
            CliError::Config(format!(
                "config key device: unknown preset {device_name:?}, expected one of {:?}",
                DeviceProfile::preset_names()
            ))
        })?;
        let seed = seed_override
            .map(Ok)
            .unwrap_or_else(|| crate::kv_get(kv, "seed", 0u64))?;
        let cfg = GenConfig {
            kind,
            style,
            db_size: crate::kv_get(kv, "db_size", 20)?,
            db_seed: crate::kv_get(kv, "db_seed", seed)?,
            db_skew: crate::kv_get(kv, "db_skew", 0.0)?,
            users: crate::kv_get(kv, "users", 10)?,
            user_base: crate::kv_get(kv, "user_base", 0)?,
            passwords_per_user: crate::kv_get(kv, "passwords_per_user", 6)?,
            repetitions: crate::kv_get(kv, "repetitions", 20)?,
            background_per_user: crate::kv_get(kv, "background_per_user", 0)?,
            snr_db: crate::kv_get(kv, "snr_db", 10.0)?,
            device,
            rate_hz: crate::kv_get(kv, "rate_hz", 200)?,
            seed,
        };
        if cfg.users == 0 {
            return Err(CliError::Config("config key users: must be positive".into()));
        }
        if cfg.passwords_per_user == 0 || cfg.repetitions == 0 {
            return Err(CliError::Config(
                "config keys passwords_per_user and repetitions must be positive".into(),
            ));
        }
        if cfg.passwords_per_user > cfg.db_size {
            return Err(CliError::Config(format!(
                "config key passwords_per_user: {} exceeds db_size {}",
                cfg.passwords_per_user, cfg.db_size
            )));
        }
        if !SUPPORTED_RATES.contains(&cfg.rate_hz) {
            return Err(CliError::Config(format!(
                "config key rate_hz: {} is not one of {SUPPORTED_RATES:?}",
                cfg.rate_hz
            )));
        }
        if !cfg.snr_db.is_finite() {
            return Err(CliError::Config(
                "config key snr_db: must be finite".into(),
            ));
        }
        if cfg.background_per_user > 0 && cfg.style == Style::Entry {
            return Err(CliError::Config(
                "config key background_per_user: needs style = episode".into(),
            ));
        }
        Ok(cfg)
    }
}

const ACTIVITIES: [ActivityKind; 5] = [
    ActivityKind::Walk,
    ActivityKind::Still,
    ActivityKind::Drink,
    ActivityKind::Type,
    ActivityKind::Stairs,
];

fn activity(rng: &mut SeededRng, lo_s: f64, hi_s: f64) -> EpisodeAction {
    EpisodeAction::Activity {
        kind: ACTIVITIES[rng.gen_index(ACTIVITIES.len())],
        duration_s: lo_s + (hi_s - lo_s) * rng.next_f64(),
    }
}

/// Entry style is the bare entry (the composer adds the still/raise
/// choreography); episode style buries it in everyday motion, long
/// enough that duty-cycled sensing spends most of its time listening.
fn script(style: Style, pwd: &Password, rng: &mut SeededRng) -> Vec<EpisodeAction> {
    match style {
        Style::Entry => vec![EpisodeAction::Entry(pwd.clone())],
        Style::Episode => {
            let mut s = vec![activity(rng, 20.0, 30.0)];
            if rng.next_f64() < 0.25 {
                s.push(EpisodeAction::NonPassword);
            }
            s.push(EpisodeAction::Entry(pwd.clone()));
            s.push(activity(rng, 20.0, 30.0));
            s
        }
    }
}

fn background_script(rng: &mut SeededRng) -> Vec<EpisodeAction> {
    (0..3).map(|_| activity(rng, 15.0, 25.0)).collect()
}

/// Balanced assignment: user `i` takes `passwords_per_user` consecutive
/// database slots starting at `i * passwords_per_user mod db_size`, so
/// every password is worn by someone once `users * passwords_per_user`
/// reaches the database size. A random draw at this scale routinely
/// leaves classes untrained.
fn assigned_passwords(db: &PasswordDb, user_index: usize, per_user: usize) -> Vec<Password> {
    let start = (user_index * per_user) % db.len();
    (0..per_user)
        .map(|j| db.entries()[(start + j) % db.len()].0.clone())
        .collect()
}

pub fn run(args: &GenArgs) -> CliResult<()> {
    let config_text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("config {}: {e}", args.config.display())))?;
    let kv = imukey_core::trainer::parse_kv(&config_text).map_err(config_err)?;
    let cfg = GenConfig::from_kv(&kv, args.seed)?;

    let mut db_rng = SeededRng::new(cfg.db_seed);
    let db = PasswordDb::sample(&mut db_rng, cfg.kind, cfg.db_size, cfg.db_skew)
        .map_err(config_err)?;

    let mut rng = SeededRng::new(cfg.seed);
    let mut records: Vec<DatasetRecord> = Vec::new();
    let mut users = Vec::new();
    for i in 0..cfg.users {
        let user_id = cfg.user_base + i;
        users.push(user_id);
        let profile = UserProfile::sample(&mut rng);
        let gc = GeneratorConfig::new(
            cfg.seed,
            cfg.snr_db,
            cfg.device.clone(),
            profile,
            cfg.rate_hz,
        );
        for pwd in assigned_passwords(&db, i as usize, cfg.passwords_per_user) {
            for _ in 0..cfg.repetitions {
                let actions = script(cfg.style, &pwd, &mut rng);
                records.push(synth_record(
                    records.len() as u64,
                    user_id,
                    &actions,
                    &gc,
                    Some(pwd.clone()),
                    &cfg,
                    &mut rng,
                )?);
            }
        }
        for _ in 0..cfg.background_per_user {
            let actions = background_script(&mut rng);
            records.push(synth_record(
                records.len() as u64,
                user_id,
                &actions,
                &gc,
                None,
                &cfg,
                &mut rng,
            )?);
        }
    }

    let mut buf = Vec::new();
    write_jsonl(&mut buf, &records).map_err(data_err)?;
    std::fs::write(&args.out, &buf)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.out.display())))?;

    let manifest = GenManifest {
        command: "gen".into(),
        kind: cfg.kind.to_string(),
        style: match cfg.style {
            Style::Entry => "entry".into(),
            Style::Episode => "episode".into(),
        },
        seed: cfg.seed,
        db_seed: cfg.db_seed,
        db_size: cfg.db_size,
        db_skew: cfg.db_skew,
        device: cfg.device.name.clone(),
        rate_hz: cfg.rate_hz,
        snr_db: cfg.snr_db,
        users,
        passwords_per_user: cfg.passwords_per_user,
        repetitions: cfg.repetitions,
        background_per_user: cfg.background_per_user,
        records: records.len(),
        db: db.passwords().cloned().collect(),
        data_sha256: sha256_hex(&buf),
        config_sha256: sha256_hex(config_text.as_bytes()),
    };
    write_manifest(&manifest_path(&args.out), &manifest)?;
    println!(
        "wrote {} records ({} users, {} per user) to {}",
        records.len(),
        cfg.users,
        per_user_records(&cfg),
        args.out.display()
    );
    Ok(())
}

fn per_user_records(cfg: &GenConfig) -> usize {
    cfg.passwords_per_user * cfg.repetitions + cfg.background_per_user
}

fn synth_record(
    id: u64,
    user: u32,
    actions: &[EpisodeAction],
    gc: &GeneratorConfig,
    pwd: Option<Password>,
    cfg: &GenConfig,
    rng: &mut SeededRng,
) -> CliResult<DatasetRecord> {
    let clean = compose_episode(actions, gc, rng).map_err(data_err)?;
    let noisy = add_noise_to_snr(&clean, cfg.snr_db, rng).map_err(data_err)?;
    Ok(DatasetRecord::from_segment(
        id,
        &noisy,
        &cfg.device.name,
        user,
        pwd,
        cfg.snr_db,
    ))
}
