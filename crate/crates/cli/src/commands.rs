//! The seven operator commands. Every command is a pure function of
//! (config, input files, seed): reruns produce bytewise-identical outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vaelab_core::checkpoint::{self, Checkpoint};
use vaelab_core::cvae::{
    cvae_sample, cvae_train_step, regressor_train_step, CvaeConfig, CvaeModel, RegressorModel,
};
use vaelab_core::data::{batches, column_condition, load_idx, ring_map, ConditioningSpec, Dataset};
use vaelab_core::nn::AdamConfig;
use vaelab_core::oracle::{convergence_sweep, TargetDensity};
use vaelab_core::vae::{elbo_estimate, sample, train_step, DecoderFamily, ModelConfig, VaeModel};

use crate::config::{ConfigError, RunConfig};
use crate::pgm::{tile_grid, write_pgm, GrayImage};

const SAMPLE_RNG_SALT: u64 = 0x5eed_0002;
const RING_DATA_SALT: u64 = 0x5eed_0003;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(vaelab_core::Error),
    Io(PathBuf, std::io::Error),
    /// A post-run assertion failed; the command ran but its output does
    /// not satisfy the contract it checks.
    Assertion(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(path, e) => write!(f, "io error on {}: {e}", path.display()),
            CliError::Assertion(msg) => write!(f, "post-run assertion failed: {msg}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<vaelab_core::Error> for CliError {
    fn from(e: vaelab_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    /// Exit codes: 2 config, 3 data/io, 4 numeric, 5 failed post-run
    /// assertion, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use vaelab_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io(..) => 3,
            CliError::Assertion(_) => 5,
            CliError::Core(e) => match e {
                E::Io { .. }
                | E::BadMagic { .. }
                | E::Truncated { .. }
                | E::CountMismatch { .. }
                | E::Checkpoint(_) => 3,
                E::NonFinite { .. } | E::Domain { .. } => 4,
                E::InvalidArgument(_) => 2,
                _ => 1,
            },
        }
    }
}

// ── Shared plumbing ──────────────────────────────────────────────────

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let images = cfg
        .data_path("images")?
        .ok_or_else(|| CliError::Config("'images' path is required".into()))?;
    let labels = cfg.data_path("labels")?;
    let ds = load_idx(&images, labels.as_deref())?;
    let subset = cfg.usize_or("subset", 0)?;
    Ok(if subset > 0 { ds.subset(subset)? } else { ds })
}

fn parse_family(cfg: &RunConfig) -> Result<DecoderFamily, CliError> {
    match cfg.str_or("family", "bernoulli") {
        "bernoulli" => Ok(DecoderFamily::Bernoulli),
        "gaussian" => Ok(DecoderFamily::gaussian(cfg.positive_f64_or("sigma", 0.1)?)?),
        other => Err(CliError::Config(format!(
            "'family' must be bernoulli or gaussian, got '{other}'"
        ))),
    }
}

fn hidden_dims(cfg: &RunConfig) -> Result<Vec<usize>, CliError> {
    let hidden = cfg.usize_list_or("hidden", &[128])?;
    if hidden.contains(&0) {
        return Err(CliError::Config("'hidden' widths must be positive".into()));
    }
    Ok(hidden)
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(dir.clone(), e))?;
    Ok(dir)
}

struct MetricsWriter {
    out: String,
    path: PathBuf,
    emit_timing: bool,
    start: Instant,
}

impl MetricsWriter {
    fn new(path: PathBuf, header: &str, emit_timing: bool) -> Self {
        MetricsWriter {
            out: format!("{header}\n"),
            path,
            emit_timing,
            start: Instant::now(),
        }
    }

    fn wall_ms(&self) -> u128 {
        if self.emit_timing {
            self.start.elapsed().as_millis()
        } else {
            0
        }
    }

    fn row(&mut self, step: usize, values: &[f64]) {
        let _ = write!(self.out, "{step}");
        for v in values {
            let _ = write!(self.out, ",{v}");
        }
        let _ = writeln!(self.out, ",{}", self.wall_ms());
    }

    fn finish(self) -> Result<(), CliError> {
        fs::write(&self.path, self.out).map_err(|e| CliError::Io(self.path.clone(), e))
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn image_dims_for(ds: &Dataset) -> Result<(usize, usize), CliError> {
    ds.image_dims()
        .ok_or_else(|| CliError::Config("this command needs image-shaped data (h·w = D)".into()))
}

/// Drive a training loop for `steps` minibatch steps with deterministic
/// shuffled epochs, invoking `step_fn(step_index, row_indices)`.
fn drive_steps<F>(
    steps: usize,
    n: usize,
    batch_size: usize,
    seed: u64,
    mut step_fn: F,
) -> Result<(), CliError>
where
    F: FnMut(usize, &[usize]) -> Result<(), CliError>,
{
    let mut step = 0;
    let mut epoch = 0u64;
    while step < steps {
        for idx in batches(n, batch_size, seed, epoch)? {
            if step >= steps {
                break;
            }
            step_fn(step, &idx)?;
            step += 1;
        }
        epoch += 1;
    }
    Ok(())
}

// ── train-vae ────────────────────────────────────────────────────────

pub fn cmd_train_vae(cfg: &RunConfig) -> Result<(), CliError> {
    let out = ensure_out_dir(cfg)?;
    let ds = load_dataset(cfg)?;
    let (h, w) = image_dims_for(&ds)?;
    let seed = cfg.u64_or("seed", 0)?;
    let steps = cfg.usize_or("steps", 1000)?;
    let batch_size = cfg.positive_usize_or("batch_size", 128)?;
    let lr = cfg.f64_or("lr", 1e-3)?;

    let mut model = VaeModel::init(&ModelConfig {
        input_dim: ds.dim(),
        hidden: hidden_dims(cfg)?,
        latent_dim: cfg.positive_usize_or("latent_dim", 20)?,
        family: parse_family(cfg)?,
        seed,
    })?;
    let mut opt = model.adam_state(AdamConfig::with_lr(lr));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut metrics = MetricsWriter::new(
        out.join("metrics.csv"),
        "step,recon,kl,total,wall_ms",
        cfg.bool_or("emit_timing", false)?,
    );
    drive_steps(steps, ds.len(), batch_size, seed, |step, idx| {
        let batch = ds.examples().take_rows(idx);
        let terms = train_step(&mut model, &batch, &mut opt, &mut rng)?;
        metrics.row(step + 1, &[terms.recon, terms.kl, terms.total]);
        Ok(())
    })?;
    metrics.finish()?;

    checkpoint::save(
        out.join("model.ckpt"),
        &Checkpoint::Vae(model.clone(), Some(opt)),
    )?;

    // Fig-5-style prior sample grid: decoder only, the encoder plays no
    // part in sampling.
    let mut sample_rng = ChaCha8Rng::seed_from_u64(seed ^ SAMPLE_RNG_SALT);
    let grid = sample(&model, 64, &mut sample_rng)?;
    let tiles: Vec<GrayImage> = (0..64)
        .map(|i| GrayImage::from_row(h, w, grid.row(i)))
        .collect();
    let sheet = tile_grid(&tiles, 8);
    write_pgm(&out.join("samples.pgm"), &sheet)
        .map_err(|e| CliError::Io(out.join("samples.pgm"), e))?;
    Ok(())
}

// ── train-cvae ───────────────────────────────────────────────────────

pub fn cmd_train_cvae(cfg: &RunConfig) -> Result<(), CliError> {
    let out = ensure_out_dir(cfg)?;
    let ds = load_dataset(cfg)?;
    let (h, w) = image_dims_for(&ds)?;
    let spec = ConditioningSpec {
        column_index: cfg.usize_or("column", 14)?,
        binarize: cfg.bool_or("binarize", true)?,
    };
    let cond = column_condition(&ds, &spec)?;
    let seed = cfg.u64_or("seed", 0)?;
    let steps = cfg.usize_or("steps", 1000)?;
    let batch_size = cfg.positive_usize_or("batch_size", 128)?;
    let k = cfg.positive_usize_or("k", 10)?;

    let mut model = CvaeModel::init(&CvaeConfig {
        cond_dim: cond.cond_dim(),
        target_dim: cond.target_dim(),
        hidden: hidden_dims(cfg)?,
        latent_dim: cfg.positive_usize_or("latent_dim", 20)?,
        family: parse_family(cfg)?,
        seed,
    })?;
    let mut opt = model.adam_state(AdamConfig::with_lr(cfg.f64_or("lr", 1e-3)?));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut metrics = MetricsWriter::new(
        out.join("metrics.csv"),
        "step,recon,kl,total,wall_ms",
        cfg.bool_or("emit_timing", false)?,
    );
    drive_steps(steps, ds.len(), batch_size, seed, |step, idx| {
        // Binarization noise is redrawn on every presentation.
        let (x, y) = cond.present(idx, &mut rng)?;
        let terms = cvae_train_step(&mut model, &x, &y, &mut opt, &mut rng)?;
        metrics.row(step + 1, &[terms.recon, terms.kl, terms.total]);
        Ok(())
    })?;
    metrics.finish()?;

    checkpoint::save(
        out.join("model.ckpt"),
        &Checkpoint::Cvae(model.clone(), Some(opt)),
    )?;

    // Completion sheet: condition | k sampled completions | ground truth.
    let rows = ds.len().min(8);
    let mut sheet_rng = ChaCha8Rng::seed_from_u64(seed ^ SAMPLE_RNG_SALT);
    let mut tiles = Vec::with_capacity(rows * (k + 2));
    for i in 0..rows {
        let (x, y) = cond.present(&[i], &mut sheet_rng)?;
        tiles.push(GrayImage::from_column(h, w, spec.column_index, x.row(0)));
        let candidates = &cvae_sample(&model, &x, k, &mut sheet_rng)?[0];
        for c in 0..k {
            tiles.push(GrayImage::from_row(h, w, candidates.row(c)));
        }
        tiles.push(GrayImage::from_row(h, w, y.row(0)));
    }
    let sheet = tile_grid(&tiles, k + 2);
    write_pgm(&out.join("sheet.pgm"), &sheet)
        .map_err(|e| CliError::Io(out.join("sheet.pgm"), e))?;
    Ok(())
}

// ── train-regressor ──────────────────────────────────────────────────

pub fn cmd_train_regressor(cfg: &RunConfig) -> Result<(), CliError> {
    let out = ensure_out_dir(cfg)?;
    let ds = load_dataset(cfg)?;
    let (h, w) = image_dims_for(&ds)?;
    let spec = ConditioningSpec {
        column_index: cfg.usize_or("column", 14)?,
        binarize: cfg.bool_or("binarize", true)?,
    };
    let cond = column_condition(&ds, &spec)?;
    let seed = cfg.u64_or("seed", 0)?;
    let steps = cfg.usize_or("steps", 1000)?;
    let batch_size = cfg.positive_usize_or("batch_size", 128)?;

    let mut model =
        RegressorModel::init(cond.cond_dim(), cond.target_dim(), &hidden_dims(cfg)?, seed)?;
    let mut opt = model.adam_state(AdamConfig::with_lr(cfg.f64_or("lr", 1e-3)?));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut metrics = MetricsWriter::new(
        out.join("metrics.csv"),
        "step,loss,wall_ms",
        cfg.bool_or("emit_timing", false)?,
    );
    drive_steps(steps, ds.len(), batch_size, seed, |step, idx| {
        let (x, y) = cond.present(idx, &mut rng)?;
        let loss = regressor_train_step(&mut model, &x, &y, &mut opt)?;
        metrics.row(step + 1, &[loss]);
        Ok(())
    })?;
    metrics.finish()?;

    checkpoint::save(
        out.join("model.ckpt"),
        &Checkpoint::Regressor(model.clone(), Some(opt)),
    )?;

    let rows = ds.len().min(8);
    let mut sheet_rng = ChaCha8Rng::seed_from_u64(seed ^ SAMPLE_RNG_SALT);
    let mut tiles = Vec::with_capacity(rows * 3);
    for i in 0..rows {
        let (x, y) = cond.present(&[i], &mut sheet_rng)?;
        let pred = model.predict(&x)?;
        tiles.push(GrayImage::from_column(h, w, spec.column_index, x.row(0)));
        tiles.push(GrayImage::from_row(h, w, pred.row(0)));
        tiles.push(GrayImage::from_row(h, w, y.row(0)));
    }
    let sheet = tile_grid(&tiles, 3);
    write_pgm(&out.join("sheet.pgm"), &sheet)
        .map_err(|e| CliError::Io(out.join("sheet.pgm"), e))?;
    Ok(())
}

// ── eval ─────────────────────────────────────────────────────────────

pub fn cmd_eval(cfg: &RunConfig, checkpoint_path: &Path) -> Result<(), CliError> {
    let out = ensure_out_dir(cfg)?;
    let model = match checkpoint::load(checkpoint_path)? {
        Checkpoint::Vae(model, _) => model,
        other => {
            return Err(CliError::Core(vaelab_core::Error::Checkpoint(format!(
                "eval needs a vae checkpoint, found kind '{}'",
                other.kind()
            ))))
        }
    };
    let n_samples = cfg.positive_usize_or("n_samples", 100)?;
    let seed = cfg.u64_or("seed", 0)?;

    // `subset = 0` is a legal empty evaluation: header-only report.
    let mut csv = String::from("index,elbo,se,n_samples\n");
    if cfg.str_or("subset", "") != "0" {
        let ds = load_dataset(cfg)?;
        if ds.dim() != model.input_dim() {
            return Err(CliError::Core(vaelab_core::Error::Checkpoint(format!(
                "checkpoint expects width {}, data has width {}",
                model.input_dim(),
                ds.dim()
            ))));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let estimates = elbo_estimate(&model, ds.examples(), n_samples, &mut rng)?;
        for (i, est) in estimates.iter().enumerate() {
            csv.push_str(&format!("{i},{},{},{}\n", est.mean, est.se, est.n_samples));
        }
    }
    write_text(&out.join("elbo.csv"), &csv)
}

// ── sample ───────────────────────────────────────────────────────────

pub fn cmd_sample(cfg: &RunConfig, checkpoint_path: &Path) -> Result<(), CliError> {
    let out = ensure_out_dir(cfg)?;
    let model = match checkpoint::load(checkpoint_path)? {
        Checkpoint::Vae(model, _) => model,
        other => {
            return Err(CliError::Core(vaelab_core::Error::Checkpoint(format!(
                "sample needs a vae checkpoint, found kind '{}'",
                other.kind()
            ))))
        }
    };
    let n = cfg.positive_usize_or("n", 64)?;
    let seed = cfg.u64_or("seed", 0)?;
    let d = model.decoder.output_dim();
    let side = (d as f64).sqrt() as usize;
    if side * side != d {
        return Err(CliError::Config(format!(
            "decoder output width {d} is not square; cannot tile a grid"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SAMPLE_RNG_SALT);
    let samples = sample(&model, n, &mut rng)?;
    let tiles: Vec<GrayImage> = (0..n)
        .map(|i| GrayImage::from_row(side, side, samples.row(i)))
        .collect();
    let sheet = tile_grid(&tiles, 8.min(n));
    write_pgm(&out.join("samples.pgm"), &sheet)
        .map_err(|e| CliError::Io(out.join("samples.pgm"), e))
}

// ── ring-demo ────────────────────────────────────────────────────────

pub fn cmd_ring_demo(cfg: &RunConfig) -> Result<(), CliError> {
    use rand_distr::{Distribution, StandardNormal};
    let out = ensure_out_dir(cfg)?;
    let n = cfg.positive_usize_or("n", 4096)?;
    let seed = cfg.u64_or("seed", 0)?;

    // Analytic point set, with the radius identity checked on every point.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ RING_DATA_SALT);
    let mut csv = String::from("x,y\n");
    for _ in 0..n {
        let z = [
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        ];
        let g = ring_map(z);
        let zn = (z[0] * z[0] + z[1] * z[1]).sqrt();
        let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
        if (gn - (zn / 10.0 + 1.0)).abs() > 1e-12 {
            return Err(CliError::Assertion(format!(
                "ring radius identity violated: ‖g‖ = {gn}, ‖z‖/10 + 1 = {}",
                zn / 10.0 + 1.0
            )));
        }
        csv.push_str(&format!("{},{}\n", g[0], g[1]));
    }
    write_text(&out.join("ring_analytic.csv"), &csv)?;

    if !cfg.bool_or("ring_train", true)? {
        return Ok(());
    }

    // Learn the same distribution with a small Gaussian-decoder model and
    // decode fresh prior draws.
    let steps = cfg.usize_or("ring_steps", 3000)?;
    let train_data = {
        let mut data_rng = ChaCha8Rng::seed_from_u64(seed);
        vaelab_core::data::ring_generate(4096, &mut data_rng)?
    };
    let mut model = VaeModel::init(&ModelConfig {
        input_dim: 2,
        hidden: vec![64, 64],
        latent_dim: 2,
        family: DecoderFamily::gaussian(0.1)?,
        seed,
    })?;
    let mut opt = model.adam_state(AdamConfig::with_lr(2e-3));
    let mut train_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    drive_steps(steps, 4096, 128, seed, |_, idx| {
        let batch = train_data.take_rows(idx);
        train_step(&mut model, &batch, &mut opt, &mut train_rng)?;
        Ok(())
    })?;

    let mut sample_rng = ChaCha8Rng::seed_from_u64(seed ^ SAMPLE_RNG_SALT);
    let decoded = sample(&model, n, &mut sample_rng)?;
    let mut csv = String::from("x,y\n");
    let mut radius_sum = 0.0;
    for i in 0..n {
        let r = decoded.row(i);
        radius_sum += (r[0] * r[0] + r[1] * r[1]).sqrt();
        csv.push_str(&format!("{},{}\n", r[0], r[1]));
    }
    write_text(&out.join("ring_decoded.csv"), &csv)?;

    let mean_radius = radius_sum / n as f64;
    let expect = (std::f64::consts::PI / 2.0).sqrt() / 10.0 + 1.0;
    if (mean_radius - expect).abs() / expect > 0.10 {
        return Err(CliError::Assertion(format!(
            "trained decoder mean radius {mean_radius} deviates more than 10% from {expect}"
        )));
    }
    Ok(())
}

// ── appendix-sweep ───────────────────────────────────────────────────

pub fn cmd_appendix_sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let out = ensure_out_dir(cfg)?;
    let quad_points = cfg.positive_usize_or("quad_points", 8192)?;
    if quad_points < 4096 {
        return Err(CliError::Config(
            "'quad_points' must be at least 4096".into(),
        ));
    }
    let (target, default_sigmas, default_xs): (TargetDensity, &[f64], &[f64]) =
        match cfg.str_or("sweep_family", "mixture") {
            "mixture" => (
                TargetDensity::TwoBumps,
                &[0.5, 0.1, 0.02],
                &[-3.0, -1.5, 0.0, 1.5, 3.0],
            ),
            // At small σ and near-mean x the prescribed recognition model
            // coincides with the exact conjugate posterior to < 1e-6 nats.
            "affine" => (
                TargetDensity::Gaussian { mean: 3.0, sd: 2.0 },
                &[0.01, 0.005, 0.002],
                &[2.8, 3.0, 3.2],
            ),
            other => {
                return Err(CliError::Config(format!(
                    "'sweep_family' must be mixture or affine, got '{other}'"
                )))
            }
        };
    let sigmas = cfg.f64_list_or("sigmas", default_sigmas)?;
    let xs = cfg.f64_list_or("xs", default_xs)?;
    let table = convergence_sweep(&target, &sigmas, &xs, quad_points)?;
    write_text(&out.join("sweep.csv"), &table.to_csv())?;
    if !table.last_below_first_for_every_x() {
        return Err(CliError::Assertion(
            "KL at the smallest σ is not below KL at the largest σ for every x".into(),
        ));
    }
    Ok(())
}
