use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::config::AdaptConfig;
use super::gradual::{adapt_self, adapt_teacher_guided, run_plan, AdaptOutcome, BatchKind, Plan};
use super::record::AdaptRunRecord;
use crate::data::Dataset;
use crate::detector::Detector;
use crate::pseudolabel::gen_pseudo;
use crate::{Error, Result};

/// Rows of the ablation matrix, keyed by (teacher guidance, DomainMix,
/// gradual adaptation, full fine-tuning).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationMode {
    /// No adaptation.
    Source,
    /// BN-only training on plain half-source/half-target batches.
    BnAdapt,
    /// BN-only training on DomainMix batches.
    BnDmx,
    /// Gradual self-labeling without a teacher.
    SelfAdapt,
    /// Teacher guidance, all layers trained from the first epoch.
    NoGa,
    /// Teacher-guided gradual adaptation.
    Teacher,
}

impl AblationMode {
    pub const ALL: [AblationMode; 6] = [
        AblationMode::Source,
        AblationMode::BnAdapt,
        AblationMode::BnDmx,
        AblationMode::SelfAdapt,
        AblationMode::NoGa,
        AblationMode::Teacher,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Source => "source",
            AblationMode::BnAdapt => "bn-adapt",
            AblationMode::BnDmx => "bn-dmx",
            AblationMode::SelfAdapt => "self",
            AblationMode::NoGa => "no-ga",
            AblationMode::Teacher => "teacher",
        }
    }

    /// `(tg, dmx, ga, ft)`.
    pub fn flags(self) -> (bool, bool, bool, bool) {
        match self {
            AblationMode::Source => (false, false, false, false),
            AblationMode::BnAdapt => (false, false, true, false),
            AblationMode::BnDmx => (false, true, true, false),
            AblationMode::SelfAdapt => (false, true, true, true),
            AblationMode::NoGa => (true, true, false, true),
            AblationMode::Teacher => (true, true, true, true),
        }
    }

    pub fn from_flags(tg: bool, dmx: bool, ga: bool, ft: bool) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.flags() == (tg, dmx, ga, ft))
            .ok_or_else(|| {
                let rows: Vec<String> = Self::ALL
                    .iter()
                    .map(|m| {
                        let (a, b, c, d) = m.flags();
                        format!("{}(tg={a},dmx={b},ga={c},ft={d})", m.name())
                    })
                    .collect();
                Error::Config(format!(
                    "unsupported flag combination tg={tg} dmx={dmx} ga={ga} ft={ft}; valid rows: {}",
                    rows.join(" ")
                ))
            })
    }

    pub fn from_config(cfg: &AdaptConfig) -> Result<Self> {
        Self::from_flags(cfg.use_tg, cfg.use_dmx, cfg.use_ga, cfg.use_ft)
    }

    pub fn needs_teacher(self) -> bool {
        self.flags().0
    }

    /// `cfg` with this row's flags.
    pub fn apply(self, cfg: &AdaptConfig) -> AdaptConfig {
        let (tg, dmx, ga, ft) = self.flags();
        AdaptConfig {
            use_tg: tg,
            use_dmx: dmx,
            use_ga: ga,
            use_ft: ft,
            ..cfg.clone()
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|m| m.name()).collect();
            Error::Config(format!("unknown mode '{s}'; expected one of {}", names.join(", ")))
        })
    }
}

pub type AblationOutcome = AdaptOutcome;

/// Realizes one ablation row. Teacher rows need `teacher`.
pub fn run_ablation(
    mode: AblationMode,
    student: &Detector,
    teacher: Option<&Detector>,
    source: &Dataset,
    target: &Dataset,
    cfg: &AdaptConfig,
    run_dir: Option<&Path>,
) -> Result<AblationOutcome> {
    let cfg = mode.apply(cfg);
    let need_teacher = || {
        teacher.ok_or_else(|| Error::Config(format!("mode {mode} needs a teacher model")))
    };
    let bn_only = |kind: BatchKind| -> Result<AdaptOutcome> {
        let target = target.without_labels();
        let initial = gen_pseudo(student, &target, cfg.conf_threshold, "adapt:source")?;
        let plan = Plan {
            freeze_first: true,
            switch_at: None,
            refresh: false,
            batches: kind,
        };
        let (model, record) = run_plan(student, source, &target, initial, &cfg, plan, "adapt", run_dir)?;
        Ok(AdaptOutcome {
            model,
            record,
            teacher: None,
        })
    };
    match mode {
        AblationMode::Source => Ok(AdaptOutcome {
            model: student.clone(),
            record: AdaptRunRecord::new("source"),
            teacher: None,
        }),
        AblationMode::BnAdapt => bn_only(BatchKind::Interleaved),
        AblationMode::BnDmx => bn_only(BatchKind::Mixed),
        AblationMode::SelfAdapt => adapt_self(student, source, target, &cfg, run_dir),
        AblationMode::Teacher => adapt_teacher_guided(student, need_teacher()?, source, target, &cfg, run_dir),
        AblationMode::NoGa => {
            let teacher = need_teacher()?;
            let target = target.without_labels();
            let plan = Plan {
                freeze_first: false,
                switch_at: None,
                refresh: false,
                batches: BatchKind::Mixed,
            };
            let t_dir = run_dir.map(|d| d.join("teacher"));
            let t_init = gen_pseudo(teacher, &target, cfg.conf_threshold, "teacher:source")?;
            let (t_model, t_record) = run_plan(teacher, source, &target, t_init, &cfg, plan, "teacher", t_dir.as_deref())?;
            let labels = gen_pseudo(&t_model, &target, cfg.conf_threshold, "teacher:adapted")?;
            let s_dir = run_dir.map(|d| d.join("student"));
            let (model, record) = run_plan(student, source, &target, labels, &cfg, plan, "adapt", s_dir.as_deref())?;
            Ok(AdaptOutcome {
                model,
                record,
                teacher: Some((t_model, t_record)),
            })
        }
    }
}
