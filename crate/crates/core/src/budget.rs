//! Per-session cost model, budget/ratio planning and seeded assembly of
//! human/pseudo mixtures.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedSession, Dataset, Variant};
use crate::money::Money;

#[derive(Debug, Error)]
pub enum BudgetError {
    #[error("invalid plan input: {0}")]
    InvalidInput(String),
    #[error("invalid cost model: {0}")]
    InvalidCostModel(String),
    #[error("plan needs {needed} {what} sessions but the pool holds {available}")]
    InfeasiblePlan {
        what: &'static str,
        needed: u64,
        available: usize,
    },
    #[error("pool variant {found:?} cannot serve as {expected:?}")]
    PoolVariantMismatch { expected: Variant, found: Variant },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantCost {
    pub text: Money,
    pub label: Money,
}

impl VariantCost {
    pub fn total(&self) -> Money {
        self.text + self.label
    }
}

/// Cost of one session of each data variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub human_human: VariantCost,
    pub human_pseudo: VariantCost,
    pub pseudo_pseudo: VariantCost,
}

impl Default for CostModel {
    /// Collection costs divided by session counts: $12,800 for 1,472
    /// human-labeled sessions split evenly between text and labels; $12,800
    /// for 2,858 pseudo-labeled human sessions ($12,430 text, $370 labels); $840 for
    /// 4,293 fully generated sessions ($280 text, $560 labels).
    fn default() -> Self {
        Self {
            human_human: VariantCost {
                text: Money::from_micros(4_347_826),
                label: Money::from_micros(4_347_826),
            },
            human_pseudo: VariantCost {
                text: Money::from_micros(4_349_195),
                label: Money::from_micros(129_461),
            },
            pseudo_pseudo: VariantCost {
                text: Money::from_micros(65_222),
                label: Money::from_micros(130_445),
            },
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), BudgetError> {
        for (name, c) in [
            ("human_human", self.human_human),
            ("human_pseudo", self.human_pseudo),
            ("pseudo_pseudo", self.pseudo_pseudo),
        ] {
            if c.text < Money::ZERO || c.label < Money::ZERO {
                return Err(BudgetError::InvalidCostModel(format!("{name} has a negative cost")));
            }
            if c.total() == Money::ZERO {
                return Err(BudgetError::InvalidCostModel(format!("{name} costs nothing per session")));
            }
        }
        let hh = self.human_human.text.micros() as f64;
        let hp = self.human_pseudo.text.micros() as f64;
        if (hh - hp).abs() > 0.05 * hh.max(hp) {
            return Err(BudgetError::InvalidCostModel(
                "human text costs of human_human and human_pseudo differ by more than 5%".into(),
            ));
        }
        Ok(())
    }

    pub fn variant(&self, variant: Variant) -> Option<VariantCost> {
        match variant {
            Variant::HumanHuman => Some(self.human_human),
            Variant::HumanPseudo => Some(self.human_pseudo),
            Variant::PseudoPseudo => Some(self.pseudo_pseudo),
            Variant::Mixed => None,
        }
    }
}

/// Sessions available in each pool, for feasibility checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolSizes {
    pub human_human: u64,
    pub human_pseudo: u64,
    pub pseudo_pseudo: u64,
}

impl Default for PoolSizes {
    fn default() -> Self {
        Self {
            human_human: 1_472,
            human_pseudo: 2_858,
            pseudo_pseudo: 4_293,
        }
    }
}

impl PoolSizes {
    pub fn of(&self, variant: Variant) -> u64 {
        match variant {
            Variant::HumanHuman => self.human_human,
            Variant::HumanPseudo => self.human_pseudo,
            Variant::PseudoPseudo => self.pseudo_pseudo,
            Variant::Mixed => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixturePlan {
    pub budget: Money,
    pub hh_ratio: f64,
    pub pseudo_variant: Variant,
    pub n_hh: u64,
    pub n_pseudo: u64,
    pub realized_cost: Money,
    /// Unspent budget; never reallocated.
    pub leftover: Money,
    pub feasible: bool,
}

fn check_pseudo_variant(variant: Variant) -> Result<(), BudgetError> {
    match variant {
        Variant::HumanPseudo | Variant::PseudoPseudo => Ok(()),
        other => Err(BudgetError::InvalidInput(format!(
            "{other:?} is not a pseudo data variant"
        ))),
    }
}

/// Splits `budget` by `ratio` and buys whole sessions with each share.
pub fn plan_mixture(
    budget: Money,
    ratio: f64,
    variant: Variant,
    cost_model: &CostModel,
) -> Result<MixturePlan, BudgetError> {
    if budget <= Money::ZERO {
        return Err(BudgetError::InvalidInput("budget must be positive".into()));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(BudgetError::InvalidInput(format!("ratio {ratio} outside [0, 1]")));
    }
    check_pseudo_variant(variant)?;
    let c_hh = cost_model.human_human.total();
    let c_pseudo = cost_model.variant(variant).expect("pure variant").total();

    let hh_share = budget.scale(ratio);
    let pseudo_share = budget - hh_share;
    let n_hh = hh_share.whole_units(c_hh);
    let n_pseudo = pseudo_share.whole_units(c_pseudo);
    let realized_cost = c_hh * n_hh + c_pseudo * n_pseudo;
    Ok(MixturePlan {
        budget,
        hh_ratio: ratio,
        pseudo_variant: variant,
        n_hh,
        n_pseudo,
        realized_cost,
        leftover: budget - realized_cost,
        feasible: true,
    })
}

/// Ratios `0, step, 2·step, …, 1`.
pub fn ratio_grid(step: f64) -> Vec<f64> {
    let n = (1.0 / step).round().max(1.0) as u32;
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

/// Budget-major cross product. Plans that need more sessions than a pool
/// holds are kept and flagged infeasible.
pub fn plan_grid(
    budgets: &[Money],
    ratios: &[f64],
    variant: Variant,
    cost_model: &CostModel,
    pools: &PoolSizes,
) -> Result<Vec<MixturePlan>, BudgetError> {
    if budgets.is_empty() || ratios.is_empty() {
        return Err(BudgetError::InvalidInput("budget and ratio lists must be non-empty".into()));
    }
    let mut plans = Vec::with_capacity(budgets.len() * ratios.len());
    for &b in budgets {
        for &r in ratios {
            let mut plan = plan_mixture(b, r, variant, cost_model)?;
            plan.feasible = plan.n_hh <= pools.human_human && plan.n_pseudo <= pools.of(variant);
            plans.push(plan);
        }
    }
    Ok(plans)
}

#[derive(Serialize)]
struct PlanRow {
    budget: String,
    ratio: String,
    variant: &'static str,
    n_hh: u64,
    n_pseudo: u64,
    realized_cost: String,
    feasible: bool,
}

pub fn write_plans_csv<W: Write>(plans: &[MixturePlan], writer: W) -> Result<(), BudgetError> {
    let mut w = csv::Writer::from_writer(writer);
    for p in plans {
        w.serialize(PlanRow {
            budget: p.budget.to_string(),
            ratio: format!("{:.1}", p.hh_ratio),
            variant: p.pseudo_variant.short_name(),
            n_hh: p.n_hh,
            n_pseudo: p.n_pseudo,
            realized_cost: p.realized_cost.to_string(),
            feasible: p.feasible,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// The sampling RNG, named so results are reproducible across platforms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RngAlgorithm {
    #[default]
    ChaCha8,
}

impl RngAlgorithm {
    pub fn seeded(self, seed: u64) -> ChaCha8Rng {
        match self {
            RngAlgorithm::ChaCha8 => ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

fn sample<'a>(
    rng: &mut ChaCha8Rng,
    pool: &'a Dataset,
    n: u64,
    what: &'static str,
) -> Result<Vec<&'a AnnotatedSession>, BudgetError> {
    if n > pool.len() as u64 {
        return Err(BudgetError::InfeasiblePlan {
            what,
            needed: n,
            available: pool.len(),
        });
    }
    Ok(index::sample(rng, pool.len(), n as usize)
        .into_iter()
        .map(|i| &pool.sessions[i])
        .collect())
}

/// Draws `n_hh` and `n_pseudo` sessions uniformly without replacement and
/// shuffles them together with a ChaCha8 stream keyed by `seed`.
///
/// A pseudo session whose id collides with a drawn human session gets a
/// `~HP`/`~PP` suffix so ids stay unique in the mixture.
pub fn assemble_mixture(
    plan: &MixturePlan,
    hh_pool: &Dataset,
    pseudo_pool: &Dataset,
    seed: u64,
) -> Result<Dataset, BudgetError> {
    if hh_pool.variant != Variant::HumanHuman {
        return Err(BudgetError::PoolVariantMismatch {
            expected: Variant::HumanHuman,
            found: hh_pool.variant,
        });
    }
    if pseudo_pool.variant != plan.pseudo_variant {
        return Err(BudgetError::PoolVariantMismatch {
            expected: plan.pseudo_variant,
            found: pseudo_pool.variant,
        });
    }
    let mut rng = RngAlgorithm::ChaCha8.seeded(seed);
    let hh = sample(&mut rng, hh_pool, plan.n_hh, "human-human")?;
    let pseudo = sample(&mut rng, pseudo_pool, plan.n_pseudo, "pseudo")?;

    let taken: HashSet<&str> = hh.iter().map(|s| s.id()).collect();
    let suffix = format!("~{}", plan.pseudo_variant.short_name());
    let mut sessions: Vec<AnnotatedSession> = hh.into_iter().cloned().collect();
    for s in pseudo {
        let mut s = s.clone();
        if taken.contains(s.id()) {
            s.session.id.push_str(&suffix);
        }
        sessions.push(s);
    }
    sessions.shuffle(&mut rng);
    Dataset::new(Variant::Mixed, sessions).map_err(|e| BudgetError::InvalidInput(e.to_string()))
}
