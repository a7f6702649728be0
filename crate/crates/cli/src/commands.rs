use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use wmnet::attacks::{attack_and_measure, AttackResult};
use wmnet::dist::{indistinguishability_report, mean_std, DEFAULT_BINS};
use wmnet::nn::{evaluate, train};
use wmnet::seed::STREAM_MESSAGE;
use wmnet::{
    bit_error_rate, derive_key, embed, extract, keyfile, snapshot, EmbeddingPlan, Message, ModelWeights, WatermarkKey,
};

use crate::artifacts::{self, *};
use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Std ratio band and KL ceiling under which a host layer is reported as
/// indistinguishable.
pub const STD_RATIO_BAND: (f64, f64) = (0.8, 1.25);
pub const KL_CEILING: f64 = 0.15;

/// Resolved configuration plus the paths a command reads and writes.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: ExperimentConfig,
    pub out_dir: PathBuf,
    pub key_path: PathBuf,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, key_path: Option<PathBuf>) -> Self {
        let out_dir = cfg.out_dir.clone();
        let key_path = key_path.unwrap_or_else(|| out_dir.join(KEY));
        Self { cfg, out_dir, key_path }
    }

    fn file(&self, name: &str) -> PathBuf {
        artifacts::path(&self.out_dir, name)
    }

    fn load_key(&self) -> Result<WatermarkKey, CliError> {
        let key = keyfile::load(&self.key_path)?;
        let plan = &self.cfg.plan;
        let layers: Vec<&str> = key.layers.iter().map(|l| l.name.as_str()).collect();
        if key.payload_l != plan.payload_l
            || key.spreading_s != plan.spreading_s
            || layers != plan.host_layers.iter().map(String::as_str).collect::<Vec<_>>()
        {
            return Err(CliError::Usage(format!(
                "key {} (l = {}, S = {}, layers {layers:?}) does not match the config plan",
                self.key_path.display(),
                key.payload_l,
                key.spreading_s
            )));
        }
        Ok(key)
    }

    fn load_model(&self, name: &str) -> Result<ModelWeights, CliError> {
        Ok(snapshot::load(self.file(name))?)
    }

    /// `--message` value, else the message recorded by `train-watermarked`.
    fn message_or_recorded(&self, arg: Option<&str>) -> Result<Message, CliError> {
        match arg {
            Some(text) => self.parse_message(text),
            None => {
                let path = self.file(WATERMARKED);
                if !path.exists() {
                    return Err(CliError::Usage(format!("no --message given and {} does not exist", path.display())));
                }
                Ok(read_json::<WatermarkedFragment>(&path)?.message)
            }
        }
    }

    /// `random` draws `l` bits from the master seed; anything else is hex.
    pub fn parse_message(&self, text: &str) -> Result<Message, CliError> {
        let l = self.cfg.plan.payload_l;
        if text == "random" {
            return Ok(Message::random(l, &mut self.cfg.master_seed.stream(STREAM_MESSAGE))?);
        }
        Message::from_hex(text, l).map_err(|e| CliError::Usage(format!("--message: {e}")))
    }

    /// Host-layer sigmas: from the baseline fragment when present, otherwise
    /// the initialiser's standard deviation.
    fn host_sigmas(&self) -> Result<Vec<f64>, CliError> {
        let baseline = self.file(BASELINE);
        let recorded = if baseline.exists() { Some(read_json::<BaselineFragment>(&baseline)?.layer_sigma) } else { None };
        self.cfg
            .plan
            .host_layers
            .iter()
            .map(|name| match recorded.as_ref().and_then(|m| m.get(name)) {
                Some(&sigma) => Ok(sigma),
                None => Ok(self.cfg.network.init_std(name)?),
            })
            .collect()
    }

    fn plan(&self) -> Result<EmbeddingPlan, CliError> {
        let p = &self.cfg.plan;
        Ok(EmbeddingPlan::even_split(
            p.host_layers.clone(),
            p.payload_l * p.spreading_s,
            p.strength_c,
            self.host_sigmas()?,
        )?)
    }
}

fn layer_sigmas(model: &ModelWeights) -> BTreeMap<String, f64> {
    model
        .layers()
        .iter()
        .map(|l| {
            let w: Vec<f64> = l.weights.iter().map(|&x| f64::from(x)).collect();
            (l.name.clone(), mean_std(&w).1)
        })
        .collect()
}

pub fn keygen(ctx: &Context) -> Result<WatermarkKey, CliError> {
    let model = ctx.cfg.initial_model()?;
    let plan = ctx.plan()?;
    let p = &ctx.cfg.plan;
    let key = derive_key(ctx.cfg.master_seed, &model, &plan, p.payload_l, p.spreading_s)?;
    let occupancy = plan.occupancy(&model)?;
    if let Some(dir) = ctx.key_path.parent() {
        ensure_dir(dir)?;
    }
    keyfile::save(&key, &ctx.key_path)?;

    println!("setting {}", ctx.cfg.setting_label());
    println!("n = {}", key.n());
    for ((layer, pct), key_layer) in occupancy.per_layer.iter().zip(&key.layers) {
        println!("  {layer}: |Omega_k| = {}, p_k = {pct:.2}%, gamma = {:.6}", key_layer.indices.len(), key_layer.gamma);
    }
    println!("p = {:.2}%", occupancy.global);
    println!("key written to {}", ctx.key_path.display());
    Ok(key)
}

pub fn train_baseline(ctx: &Context) -> Result<BaselineFragment, CliError> {
    let start = Instant::now();
    let data = ctx.cfg.dataset.generate()?;
    let (model, history) = train(&ctx.cfg.initial_model()?, &data, &ctx.cfg.train)?;
    let ter = evaluate(&model, &data)?;
    ensure_dir(&ctx.out_dir)?;
    snapshot::save(&model, ctx.file(BASELINE_MODEL))?;
    let fragment = BaselineFragment {
        setting: ctx.cfg.setting_label(),
        ter,
        layer_sigma: layer_sigmas(&model),
        history,
        seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&ctx.file(BASELINE), &fragment)?;
    println!("baseline TER {ter:.1}%");
    Ok(fragment)
}

pub fn train_watermarked(ctx: &Context, message: Option<&str>) -> Result<WatermarkedFragment, CliError> {
    let start = Instant::now();
    let key = ctx.load_key()?;
    let message = ctx.parse_message(message.unwrap_or("random"))?;
    let data = ctx.cfg.dataset.generate()?;
    let init = ctx.cfg.initial_model()?;
    let embedded = embed(&init, &key, &message)?;
    let (model, history) = train(&embedded, &data, &ctx.cfg.train)?;
    let ber = bit_error_rate(&message, &extract(&model, &key)?)?;
    if ber != 0.0 {
        return Err(CliError::Invariant(format!("freshly trained watermarked model has BER {ber}%")));
    }
    let ter = evaluate(&model, &data)?;
    ensure_dir(&ctx.out_dir)?;
    snapshot::save(&model, ctx.file(WATERMARKED_MODEL))?;
    let fragment = WatermarkedFragment {
        setting: ctx.cfg.setting_label(),
        message_hex: message.to_hex(),
        message,
        ter,
        ber,
        occupancy: ctx.plan()?.occupancy(&init)?,
        history,
        seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&ctx.file(WATERMARKED), &fragment)?;
    println!("watermarked TER {ter:.1}%, BER {ber:.1}%, message {}", fragment.message_hex);
    Ok(fragment)
}

/// Decodes the watermark from a snapshot; also reports BER when a reference
/// message is available.
pub fn extract_cmd(ctx: &Context, model: Option<&Path>, message: Option<&str>) -> Result<Message, CliError> {
    let key = ctx.load_key()?;
    let model = match model {
        Some(p) => snapshot::load(p)?,
        None => ctx.load_model(WATERMARKED_MODEL)?,
    };
    let decoded = extract(&model, &key)?;
    println!("decoded {}", decoded.to_hex());
    let reference = match message {
        Some(text) => Some(ctx.parse_message(text)?),
        None => {
            let path = ctx.file(WATERMARKED);
            if path.exists() { Some(read_json::<WatermarkedFragment>(&path)?.message) } else { None }
        }
    };
    if let Some(reference) = reference {
        println!("BER {:.1}%", bit_error_rate(&reference, &decoded)?);
    }
    Ok(decoded)
}

pub fn attack(ctx: &Context, model: Option<&Path>, message: Option<&str>) -> Result<AttackFragment, CliError> {
    let start = Instant::now();
    let key = ctx.load_key()?;
    let message = ctx.message_or_recorded(message)?;
    let model = match model {
        Some(p) => snapshot::load(p)?,
        None => ctx.load_model(WATERMARKED_MODEL)?,
    };
    let data = ctx.cfg.dataset.generate()?;
    let attacks = ctx.cfg.expand_attacks()?;
    let rows: Vec<AttackResult> = attacks
        .par_iter()
        .map(|a| attack_and_measure(&model, &key, &message, a, &data))
        .collect::<wmnet::Result<_>>()?;

    ensure_dir(&ctx.out_dir)?;
    write_results_csv(&ctx.file(RESULTS_CSV), &rows)?;
    let fragment =
        AttackFragment { setting: ctx.cfg.setting_label(), rows, seconds: start.elapsed().as_secs_f64() };
    write_json(&ctx.file(ATTACKS), &fragment)?;
    for r in &fragment.rows {
        println!("{:<10} {:<32} TER {:>5.1}%  BER {:>5.1}%", r.attack, r.params, r.ter, r.ber);
    }
    Ok(fragment)
}

pub fn write_results_csv(path: &Path, rows: &[AttackResult]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::io(format!("writing {}", path.display()), e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["attack", "params", "ter", "ber", "modified_count"]).map_err(io)?;
    for r in rows {
        w.write_record([
            r.attack.clone(),
            r.params.clone(),
            r.ter.to_string(),
            r.ber.to_string(),
            r.modified_count().to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

/// Artifacts `report` needs, in the order they are produced.
pub const REQUIRED: [&str; 6] = [KEY, BASELINE_MODEL, BASELINE, WATERMARKED_MODEL, WATERMARKED, ATTACKS];

pub fn report(ctx: &Context) -> Result<ExperimentReport, CliError> {
    let missing: Vec<String> = REQUIRED
        .iter()
        .map(|name| if *name == KEY { ctx.key_path.clone() } else { ctx.file(name) })
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::MissingFragments(missing));
    }
    let key = ctx.load_key()?;
    let baseline: BaselineFragment = read_json(&ctx.file(BASELINE))?;
    let marked: WatermarkedFragment = read_json(&ctx.file(WATERMARKED))?;
    let attacks: AttackFragment = read_json(&ctx.file(ATTACKS))?;
    let model = ctx.load_model(WATERMARKED_MODEL)?;

    let expected = ctx.cfg.expand_attacks()?;
    let configured: Vec<(String, String)> = expected.iter().map(|a| (a.name().to_string(), a.params())).collect();
    let recorded: Vec<(String, String)> = attacks.rows.iter().map(|r| (r.attack.clone(), r.params.clone())).collect();
    if configured != recorded {
        return Err(CliError::Usage(format!(
            "{} does not match the configured attacks; rerun `attack`",
            ctx.file(ATTACKS).display()
        )));
    }

    let ber_pre_attack = bit_error_rate(&marked.message, &extract(&model, &key)?)?;
    let ind = indistinguishability_report(&model, &key, DEFAULT_BINS)?;
    let secrecy: Vec<LayerSecrecy> = ind
        .layers
        .iter()
        .map(|l| {
            let ratio = l.std_ratio();
            LayerSecrecy {
                layer: l.layer.clone(),
                std_wm: l.std_wm,
                std_non_wm: l.std_non_wm,
                std_ratio: ratio,
                kl_empirical_nats: l.kl_empirical_nats,
                kl_closed_form_nats: l.kl_closed_form_nats,
                indistinguishable: (STD_RATIO_BAND.0..=STD_RATIO_BAND.1).contains(&ratio)
                    && l.kl_empirical_nats <= KL_CEILING,
            }
        })
        .collect();
    for l in &ind.layers {
        let dump = HistogramDump { layer: l.layer.clone(), histogram: l.histogram.clone() };
        write_json(&ctx.file(&format!("hist_{}.json", l.layer)), &dump)?;
    }

    let report = ExperimentReport {
        setting: ctx.cfg.setting_label(),
        baseline_ter: baseline.ter,
        watermarked_ter: marked.ter,
        occupancy: marked.occupancy,
        ber_pre_attack,
        attacks: attacks.rows,
        indistinguishable: !secrecy.is_empty() && secrecy.iter().all(|s| s.indistinguishable),
        secrecy,
        skipped_layers: ind.skipped_layers,
        baseline_history: baseline.history,
        watermarked_history: marked.history,
        timings: Timings {
            baseline_seconds: baseline.seconds,
            watermarked_seconds: marked.seconds,
            attacks_seconds: attacks.seconds,
        },
    };
    write_json(&ctx.file(REPORT), &report)?;

    println!("{}: baseline TER {:.1}%, watermarked TER {:.1}%", report.setting, report.baseline_ter, report.watermarked_ter);
    for s in &report.secrecy {
        println!(
            "  {}: std ratio {:.3}, KL {:.3} nats{}",
            s.layer,
            s.std_ratio,
            s.kl_empirical_nats,
            if s.indistinguishable { " (indistinguishable)" } else { "" }
        );
    }
    for r in &report.attacks {
        println!("  {:<10} {:<32} TER {:>5.1}%  BER {:>5.1}%", r.attack, r.params, r.ter, r.ber);
    }
    Ok(report)
}
