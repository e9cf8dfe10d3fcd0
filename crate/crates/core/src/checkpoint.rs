//! Line-oriented text checkpoints, version-tagged, round-trip exact for
//! 64-bit floats (values print in Rust's shortest round-trip decimal form).
//!
//! Layout:
//!
//! ```text
//! vaelab-ckpt v1
//! kind vae                     # vae | cvae | regressor
//! latent_dim 20
//! family bernoulli             # or: family gaussian 0.25
//! prior_scale 1
//! mlp encoder 2
//! layer 784 128 relu
//! w <784·128 values>
//! b <128 values>
//! ...
//! mlp decoder 2
//! ...
//! adam 5000 0.001 0.9 0.999 0.00000001 8   # t lr β1 β2 ε n_params
//! m <values> / v <values> per parameter, canonical order
//! end
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::cvae::{CvaeModel, RegressorModel};
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamConfig, AdamState, DenseLayer, Mlp};
use crate::tensor::Tensor;
use crate::vae::{DecoderFamily, VaeModel};

const HEADER: &str = "vaelab-ckpt v1";

/// Any model this crate trains, plus its optimizer state if saved.
pub enum Checkpoint {
    Vae(VaeModel, Option<AdamState>),
    Cvae(CvaeModel, Option<AdamState>),
    Regressor(RegressorModel, Option<AdamState>),
}

impl Checkpoint {
    pub fn kind(&self) -> &'static str {
        match self {
            Checkpoint::Vae(..) => "vae",
            Checkpoint::Cvae(..) => "cvae",
            Checkpoint::Regressor(..) => "regressor",
        }
    }
}

// ── Writing ──────────────────────────────────────────────────────────

fn push_values(out: &mut String, tag: &str, values: &[f64]) {
    out.push_str(tag);
    for v in values {
        let _ = write!(out, " {v}");
    }
    out.push('\n');
}

fn push_mlp(out: &mut String, name: &str, mlp: &Mlp) {
    let _ = writeln!(out, "mlp {name} {}", mlp.layers().len());
    for layer in mlp.layers() {
        let _ = writeln!(
            out,
            "layer {} {} {}",
            layer.input_dim(),
            layer.output_dim(),
            layer.activation.name()
        );
        push_values(out, "w", layer.weight.data());
        push_values(out, "b", layer.bias.data());
    }
}

fn push_family(out: &mut String, family: DecoderFamily) {
    match family {
        DecoderFamily::Bernoulli => out.push_str("family bernoulli\n"),
        DecoderFamily::Gaussian { sigma } => {
            let _ = writeln!(out, "family gaussian {sigma}");
        }
    }
}

fn push_adam(out: &mut String, state: Option<&AdamState>) {
    match state {
        None => out.push_str("adam none\n"),
        Some(s) => {
            let (m, v) = s.moments();
            let c = s.config;
            let _ = writeln!(
                out,
                "adam {} {} {} {} {} {}",
                s.step_count(),
                c.lr,
                c.beta1,
                c.beta2,
                c.eps,
                m.len()
            );
            for (mi, vi) in m.iter().zip(v) {
                push_values(out, "m", mi);
                push_values(out, "v", vi);
            }
        }
    }
}

pub fn save(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    match checkpoint {
        Checkpoint::Vae(model, adam) => {
            out.push_str("kind vae\n");
            let _ = writeln!(out, "latent_dim {}", model.latent_dim);
            push_family(&mut out, model.family);
            let _ = writeln!(out, "prior_scale {}", model.prior_scale);
            push_mlp(&mut out, "encoder", &model.encoder);
            push_mlp(&mut out, "decoder", &model.decoder);
            push_adam(&mut out, adam.as_ref());
        }
        Checkpoint::Cvae(model, adam) => {
            out.push_str("kind cvae\n");
            let _ = writeln!(out, "latent_dim {}", model.latent_dim);
            let _ = writeln!(out, "cond_dim {}", model.cond_dim);
            let _ = writeln!(out, "target_dim {}", model.target_dim);
            push_family(&mut out, model.family);
            push_mlp(&mut out, "encoder", &model.encoder);
            push_mlp(&mut out, "decoder", &model.decoder);
            push_adam(&mut out, adam.as_ref());
        }
        Checkpoint::Regressor(model, adam) => {
            out.push_str("kind regressor\n");
            push_mlp(&mut out, "net", &model.net);
            push_adam(&mut out, adam.as_ref());
        }
    }
    out.push_str("end\n");
    let path = path.as_ref();
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

// ── Reading ──────────────────────────────────────────────────────────

struct Lines<'a> {
    iter: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        self.line_no += 1;
        self.iter.next().ok_or_else(|| {
            Error::Checkpoint(format!("unexpected end of file at line {}", self.line_no))
        })
    }

    fn expect_tagged(&mut self, tag: &str) -> Result<Vec<&'a str>> {
        let line = self.next()?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some(t) if t == tag => Ok(parts.collect()),
            other => Err(Error::Checkpoint(format!(
                "line {}: expected '{tag}', found '{}'",
                self.line_no,
                other.unwrap_or("")
            ))),
        }
    }
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Checkpoint(format!("cannot parse {what} from '{s}'")))
}

fn parse_values(fields: &[&str], expect: usize, what: &str) -> Result<Vec<f64>> {
    if fields.len() != expect {
        return Err(Error::Checkpoint(format!(
            "{what}: expected {expect} values, found {}",
            fields.len()
        )));
    }
    fields.iter().map(|f| parse::<f64>(f, what)).collect()
}

fn read_mlp(lines: &mut Lines, name: &str) -> Result<Mlp> {
    let head = lines.expect_tagged("mlp")?;
    if head.first() != Some(&name) {
        return Err(Error::Checkpoint(format!(
            "expected mlp '{name}', found {:?}",
            head.first()
        )));
    }
    let n_layers: usize = parse(head.get(1).copied().unwrap_or(""), "layer count")?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let spec = lines.expect_tagged("layer")?;
        if spec.len() != 3 {
            return Err(Error::Checkpoint("malformed layer line".into()));
        }
        let fan_in: usize = parse(spec[0], "fan_in")?;
        let fan_out: usize = parse(spec[1], "fan_out")?;
        let activation =
            Activation::parse(spec[2]).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let w = parse_values(&lines.expect_tagged("w")?, fan_in * fan_out, "weights")?;
        let b = parse_values(&lines.expect_tagged("b")?, fan_out, "bias")?;
        layers.push(DenseLayer {
            weight: Tensor::new(vec![fan_in, fan_out], w)?,
            bias: Tensor::new(vec![fan_out], b)?,
            activation,
        });
    }
    Mlp::from_layers(layers)
}

fn read_family(lines: &mut Lines) -> Result<DecoderFamily> {
    let fields = lines.expect_tagged("family")?;
    match fields.first() {
        Some(&"bernoulli") => Ok(DecoderFamily::Bernoulli),
        Some(&"gaussian") => {
            let sigma: f64 = parse(fields.get(1).copied().unwrap_or(""), "sigma")?;
            DecoderFamily::gaussian(sigma)
        }
        other => Err(Error::Checkpoint(format!("unknown family {other:?}"))),
    }
}

fn read_adam(lines: &mut Lines, params: &[&Tensor]) -> Result<Option<AdamState>> {
    let fields = lines.expect_tagged("adam")?;
    if fields.first() == Some(&"none") {
        return Ok(None);
    }
    if fields.len() != 6 {
        return Err(Error::Checkpoint("malformed adam line".into()));
    }
    let t: u64 = parse(fields[0], "adam t")?;
    let config = AdamConfig {
        lr: parse(fields[1], "lr")?,
        beta1: parse(fields[2], "beta1")?,
        beta2: parse(fields[3], "beta2")?,
        eps: parse(fields[4], "eps")?,
    };
    let n: usize = parse(fields[5], "adam param count")?;
    if n != params.len() {
        return Err(Error::Checkpoint(format!(
            "adam state tracks {n} parameters, model has {}",
            params.len()
        )));
    }
    let mut m = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for p in params {
        m.push(parse_values(
            &lines.expect_tagged("m")?,
            p.numel(),
            "adam m",
        )?);
        v.push(parse_values(
            &lines.expect_tagged("v")?,
            p.numel(),
            "adam v",
        )?);
    }
    Ok(Some(AdamState::restore(config, m, v, t)))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Lines {
        iter: text.lines(),
        line_no: 0,
    };
    let header = lines.next()?;
    if header != HEADER {
        return Err(Error::Checkpoint(format!(
            "unrecognized header '{header}' (expected '{HEADER}')"
        )));
    }
    let kind = lines.expect_tagged("kind")?;
    let checkpoint = match kind.first() {
        Some(&"vae") => {
            let latent_dim: usize = parse(lines.expect_tagged("latent_dim")?[0], "latent_dim")?;
            let family = read_family(&mut lines)?;
            let prior_scale: f64 = parse(lines.expect_tagged("prior_scale")?[0], "prior_scale")?;
            let encoder = read_mlp(&mut lines, "encoder")?;
            let decoder = read_mlp(&mut lines, "decoder")?;
            if encoder.output_dim() != 2 * latent_dim || decoder.input_dim() != latent_dim {
                return Err(Error::Checkpoint(format!(
                    "vae widths inconsistent with latent_dim {latent_dim}"
                )));
            }
            let model = VaeModel {
                encoder,
                decoder,
                latent_dim,
                family,
                prior_scale,
            };
            let params: Vec<&Tensor> = model
                .encoder
                .params()
                .into_iter()
                .chain(model.decoder.params())
                .collect();
            let adam = read_adam(&mut lines, &params)?;
            Checkpoint::Vae(model, adam)
        }
        Some(&"cvae") => {
            let latent_dim: usize = parse(lines.expect_tagged("latent_dim")?[0], "latent_dim")?;
            let cond_dim: usize = parse(lines.expect_tagged("cond_dim")?[0], "cond_dim")?;
            let target_dim: usize = parse(lines.expect_tagged("target_dim")?[0], "target_dim")?;
            let family = read_family(&mut lines)?;
            let encoder = read_mlp(&mut lines, "encoder")?;
            let decoder = read_mlp(&mut lines, "decoder")?;
            if encoder.input_dim() != target_dim + cond_dim
                || decoder.input_dim() != latent_dim + cond_dim
            {
                return Err(Error::Checkpoint(
                    "cvae widths inconsistent with latent/cond dims".into(),
                ));
            }
            let model = CvaeModel {
                encoder,
                decoder,
                latent_dim,
                cond_dim,
                target_dim,
                family,
            };
            let params: Vec<&Tensor> = model
                .encoder
                .params()
                .into_iter()
                .chain(model.decoder.params())
                .collect();
            let adam = read_adam(&mut lines, &params)?;
            Checkpoint::Cvae(model, adam)
        }
        Some(&"regressor") => {
            let net = read_mlp(&mut lines, "net")?;
            let model = RegressorModel { net };
            let adam = read_adam(&mut lines, &model.net.params())?;
            Checkpoint::Regressor(model, adam)
        }
        other => {
            return Err(Error::Checkpoint(format!(
                "unknown checkpoint kind {other:?}"
            )))
        }
    };
    lines.expect_tagged("end")?;
    Ok(checkpoint)
}
