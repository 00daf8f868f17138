//! Darknet-style `key=value` training configuration and the burn-in + step
//! learning-rate policy.
//!
//! ```text
//! [net]
//! batch=8
//! learning rate = 0.001     # keys are lowercased, spaces become '_'
//! burn in=100
//! policy=steps
//! steps=4000,4500
//! scales=.1,.1
//! ```
//!
//! Several assignments may share a line (`batch=8 width=512 height=512`);
//! in that form each value is the first word after its `=`. Keys outside
//! `[net]` and the top of the file are kept as opaque sections, except for
//! `[augment]`, which holds an [`AugmentPlan`].

use std::fmt::{self, Write as _};

use crate::augment::AugmentPlan;
use crate::error::{Error, Result};
use crate::loss::LossWeights;

/// One `key=value` assignment with its source line (1-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// A `[name]` block. Assignments before the first header form a section
/// with an empty name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

/// An opaque section carried through parse and serialize unchanged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSection {
    pub name: String,
    pub entries: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigWarning {
    pub line: usize,
    pub section: String,
    pub key: String,
}

impl fmt::Display for ConfigWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.section.is_empty() {
            write!(f, "line {}: unknown key {:?}", self.line, self.key)
        } else {
            write!(
                f,
                "line {}: unknown key {:?} in [{}]",
                self.line, self.key, self.section
            )
        }
    }
}

/// `"Burn In"` → `"burn_in"`.
pub fn normalize_key(key: &str) -> String {
    key.split_whitespace().collect::<Vec<_>>().join("_").to_lowercase()
}

fn split_assignments(text: &str, line: usize) -> Result<Vec<Entry>> {
    let parts: Vec<&str> = text.split('=').collect();
    if parts.len() < 2 {
        return Err(Error::Parse {
            line,
            message: format!("expected key=value, found {:?}", text.trim()),
        });
    }
    let mut out = Vec::new();
    let mut key = parts[0].trim().to_string();
    for (i, part) in parts[1..].iter().enumerate() {
        let last = i + 2 == parts.len();
        let (value, next) = if last {
            (part.trim(), "")
        } else {
            let part = part.trim();
            part.split_once(char::is_whitespace).unwrap_or((part, ""))
        };
        let k = normalize_key(&key);
        if k.is_empty() || (value.is_empty() && !last) {
            return Err(Error::Parse {
                line,
                message: format!("malformed assignment in {:?}", text.trim()),
            });
        }
        out.push(Entry {
            key: k,
            value: value.to_string(),
            line,
        });
        key = next.trim().to_string();
    }
    Ok(out)
}

/// Splits text into sections of assignments.
pub fn parse_sections(text: &str) -> Result<Vec<Section>> {
    let mut sections = vec![Section {
        name: String::new(),
        line: 0,
        entries: Vec::new(),
    }];
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split(['#', ';']).next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| Error::Parse {
                line,
                message: format!("unterminated section header {content:?}"),
            })?;
            sections.push(Section {
                name: normalize_key(name),
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let entries = split_assignments(content, line)?;
        sections.last_mut().expect("nonempty").entries.extend(entries);
    }
    if sections[0].entries.is_empty() {
        sections.remove(0);
    }
    Ok(sections)
}

pub(crate) fn parse_value<V: std::str::FromStr>(e: &Entry) -> Result<V> {
    e.value.parse().map_err(|_| Error::Parse {
        line: e.line,
        message: format!("invalid value {:?} for {}", e.value, e.key),
    })
}

pub(crate) fn parse_list<V: std::str::FromStr>(e: &Entry) -> Result<Vec<V>> {
    if e.value.trim().is_empty() {
        return Ok(Vec::new());
    }
    e.value
        .split(',')
        .map(|p| {
            p.trim().parse().map_err(|_| Error::Parse {
                line: e.line,
                message: format!("invalid list element {:?} for {}", p.trim(), e.key),
            })
        })
        .collect()
}

pub(crate) fn format_list<V: fmt::Display>(xs: &[V]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LrPolicy {
    #[default]
    Steps,
    Constant,
}

impl LrPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            LrPolicy::Steps => "steps",
            LrPolicy::Constant => "constant",
        }
    }
}

impl std::str::FromStr for LrPolicy {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s.to_ascii_lowercase().as_str() {
            "steps" => Ok(LrPolicy::Steps),
            "constant" => Ok(LrPolicy::Constant),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch: u32,
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub momentum: f64,
    pub decay: f64,
    pub angle: f64,
    pub saturation: f64,
    pub exposure: f64,
    pub hue: f64,
    pub learning_rate: f64,
    pub burn_in: u64,
    pub max_batches: u64,
    pub policy: LrPolicy,
    pub steps: Vec<u64>,
    pub scales: Vec<f64>,
    pub loss_weights: LossWeights<f64>,
    pub augment: Option<AugmentPlan>,
    pub extra_sections: Vec<RawSection>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 8,
            width: 512,
            height: 512,
            channels: 3,
            momentum: 0.9,
            decay: 0.0005,
            angle: 0.0,
            saturation: 1.5,
            exposure: 1.5,
            hue: 0.1,
            learning_rate: 0.001,
            burn_in: 100,
            max_batches: 5000,
            policy: LrPolicy::Steps,
            steps: vec![4000, 4500],
            scales: vec![0.1, 0.1],
            loss_weights: LossWeights::default(),
            augment: None,
            extra_sections: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.width == 0 || self.height == 0 {
            return fail(format!(
                "width and height must be positive, got {}x{}",
                self.width, self.height
            ));
        }
        if self.batch == 0 || self.channels == 0 {
            return fail("batch and channels must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if let Some(w) = self.steps.windows(2).find(|w| w[0] >= w[1]) {
            return fail(format!("steps must be strictly increasing ({} then {})", w[0], w[1]));
        }
        if self.scales.len() != self.steps.len() {
            return fail(format!(
                "{} scales given for {} steps",
                self.scales.len(),
                self.steps.len()
            ));
        }
        if self.scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return fail("scales must be finite and nonnegative".into());
        }
        if self.burn_in > self.max_batches {
            return fail(format!(
                "burn_in {} exceeds max_batches {}",
                self.burn_in, self.max_batches
            ));
        }
        self.loss_weights.validate()?;
        if let Some(plan) = &self.augment {
            plan.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub config: TrainConfig,
    pub warnings: Vec<ConfigWarning>,
}

fn apply_net_entry(cfg: &mut TrainConfig, e: &Entry) -> Result<bool> {
    match e.key.as_str() {
        "batch" => cfg.batch = parse_value(e)?,
        "width" => cfg.width = parse_value(e)?,
        "height" => cfg.height = parse_value(e)?,
        "channels" => cfg.channels = parse_value(e)?,
        "momentum" => cfg.momentum = parse_value(e)?,
        "decay" => cfg.decay = parse_value(e)?,
        "angle" => cfg.angle = parse_value(e)?,
        "saturation" => cfg.saturation = parse_value(e)?,
        "exposure" => cfg.exposure = parse_value(e)?,
        "hue" => cfg.hue = parse_value(e)?,
        "learning_rate" => cfg.learning_rate = parse_value(e)?,
        "burn_in" => cfg.burn_in = parse_value(e)?,
        "max_batches" => cfg.max_batches = parse_value(e)?,
        "policy" => {
            cfg.policy = e.value.parse().map_err(|_| Error::Parse {
                line: e.line,
                message: format!("unsupported learning-rate policy {:?}", e.value),
            })?
        }
        "steps" => cfg.steps = parse_list(e)?,
        "scales" => cfg.scales = parse_list(e)?,
        "alpha" => cfg.loss_weights.alpha = parse_value(e)?,
        "beta" => cfg.loss_weights.beta = parse_value(e)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Parses and validates a configuration. Unknown keys become warnings.
pub fn parse_config(text: &str) -> Result<ParsedConfig> {
    let mut config = TrainConfig::default();
    let mut warnings = Vec::new();
    for section in parse_sections(text)? {
        match section.name.as_str() {
            "" | "net" | "train" => {
                for e in &section.entries {
                    if !apply_net_entry(&mut config, e)? {
                        warnings.push(ConfigWarning {
                            line: e.line,
                            section: section.name.clone(),
                            key: e.key.clone(),
                        });
                    }
                }
            }
            "augment" => {
                let (plan, w) = AugmentPlan::from_section(&section)?;
                config.augment = Some(plan);
                warnings.extend(w);
            }
            _ => config.extra_sections.push(RawSection {
                name: section.name.clone(),
                entries: section
                    .entries
                    .iter()
                    .map(|e| (e.key.clone(), e.value.clone()))
                    .collect(),
            }),
        }
    }
    for w in &warnings {
        log::warn!("config {w}");
    }
    config.validate()?;
    Ok(ParsedConfig { config, warnings })
}

/// Writes a configuration that [`parse_config`] reads back unchanged.
pub fn serialize_config(cfg: &TrainConfig) -> String {
    let mut s = String::from("[net]\n");
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k}={v}");
    };
    kv("batch", cfg.batch.to_string());
    kv("width", cfg.width.to_string());
    kv("height", cfg.height.to_string());
    kv("channels", cfg.channels.to_string());
    kv("momentum", cfg.momentum.to_string());
    kv("decay", cfg.decay.to_string());
    kv("angle", cfg.angle.to_string());
    kv("saturation", cfg.saturation.to_string());
    kv("exposure", cfg.exposure.to_string());
    kv("hue", cfg.hue.to_string());
    kv("learning_rate", cfg.learning_rate.to_string());
    kv("burn_in", cfg.burn_in.to_string());
    kv("max_batches", cfg.max_batches.to_string());
    kv("policy", cfg.policy.name().to_string());
    kv("steps", format_list(&cfg.steps));
    kv("scales", format_list(&cfg.scales));
    kv("alpha", cfg.loss_weights.alpha.to_string());
    kv("beta", cfg.loss_weights.beta.to_string());
    if let Some(plan) = &cfg.augment {
        s.push('\n');
        s.push_str(&plan.to_section());
    }
    for sec in &cfg.extra_sections {
        let _ = writeln!(s, "\n[{}]", sec.name);
        for (k, v) in &sec.entries {
            let _ = writeln!(s, "{k}={v}");
        }
    }
    s
}

/// Learning rate at a training iteration.
///
/// During burn-in the rate ramps as `lr · (i / burn_in)⁴`; afterwards the
/// steps policy multiplies in `scales[j]` for every `steps[j] ≤ i`.
pub fn lr_at(cfg: &TrainConfig, iteration: u64) -> f64 {
    if iteration < cfg.burn_in {
        return cfg.learning_rate * (iteration as f64 / cfg.burn_in as f64).powi(4);
    }
    match cfg.policy {
        LrPolicy::Constant => cfg.learning_rate,
        LrPolicy::Steps => cfg
            .steps
            .iter()
            .zip(&cfg.scales)
            .take_while(|(&step, _)| step <= iteration)
            .fold(cfg.learning_rate, |lr, (_, &s)| lr * s),
    }
}
