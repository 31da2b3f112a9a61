//! Synthetic linked populations with known measurement error, sampled into
//! a gold file and an error-prone file.

use std::path::{Path, PathBuf};

use rand::seq::index;
use rand_distr::{Binomial, Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{covariate_fields, csv_error, csv_writer, finish_csv, write_error_prone, write_gold, ErrorProneDataset, ErrorProneRecord, GoldDataset, GoldRecord, LEDGER_MARKER};
use crate::error::{DataError, Error, ModelError};
use crate::models::{BetaPrior, DesignTerm, ErrorModelSpec, ReportingModelSpec, ReportingTables};
use crate::random::{rng_stream, sample_multinomial};
use crate::schema::{Covariate, Level, Schema};

/// Linked counts from the 1993 survey, rows the true level (BA, MA, Prof,
/// PhD, no degree), columns the census report (BA, MA, Prof, PhD).
pub const TABLE1_LINKED: [[u64; 4]; 5] = [
    [89580, 4109, 1241, 249],
    [1218, 33928, 655, 526],
    [382, 359, 8648, 563],
    [99, 193, 452, 6726],
    [10150, 1792, 2040, 337],
];

pub const EDUCATION_LABELS: [&str; 5] = ["BA", "MA", "Prof", "PhD", "None"];
pub const OUTCOME_COLUMN: &str = "education";
pub const SALARY_COLUMN: &str = "salary";
pub const GOLD_FILE: &str = "gold.csv";
pub const ERROR_PRONE_FILE: &str = "error_prone.csv";
pub const TRUTH_DIR: &str = "truth";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const RECORD_TRUTH_FILE: &str = "error_prone_truth.csv";
const TABLE1_SHAPE_SEED: u64 = 0x5eed_7ab1;

/// How the gold file is drawn from the population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case")]
pub enum GoldDesign {
    SimpleRandom,
    /// Strata are the reported levels; `rates` are relative sampling rates,
    /// scaled so the sample has `n_gold` units, with rates capped at 1.
    /// Units are drawn without replacement within each stratum.
    StratifiedByZ { rates: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub schema: Schema,
    pub population: usize,
    /// Population share of each cell.
    pub cell_probs: Vec<f64>,
    /// Pr(Y = k | cell), one row per cell.
    pub theta: Vec<Vec<f64>>,
    pub error: ErrorModelSpec,
    pub error_params: Vec<f64>,
    pub reporting: ReportingModelSpec,
    pub reporting_tables: ReportingTables,
    pub design: GoldDesign,
    pub n_gold: usize,
    pub n_error: usize,
    /// Drop sampled gold units whose truth cannot be reported, as when the
    /// gold survey only covers the reportable levels.
    #[serde(default)]
    pub gold_drops_unreportable: bool,
    pub seed: u64,
}

/// Everything the estimation side must not see.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthLedger {
    pub n_cells: usize,
    pub d_y: usize,
    pub d_z: usize,
    /// Population counts by (cell, y, z).
    pub counts: Vec<u64>,
    /// True value of each error-prone record.
    pub error_prone_truth: Vec<Level>,
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub gold: GoldDataset,
    pub error_prone: ErrorProneDataset,
    pub truth: TruthLedger,
}

impl TruthLedger {
    #[inline]
    pub fn count(&self, cell: usize, y: usize, z: usize) -> u64 {
        self.counts[(cell * self.d_y + y) * self.d_z + z]
    }

    pub fn population(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Units with truth `y` in any of `cells`, and how many of them reported
    /// something else.
    pub fn error_counts(&self, cells: impl IntoIterator<Item = usize>, y: usize) -> (u64, u64) {
        let (mut n, mut e) = (0, 0);
        for c in cells {
            for z in 0..self.d_z {
                let k = self.count(c, y, z);
                n += k;
                if z != y {
                    e += k;
                }
            }
        }
        (n, e)
    }

    pub fn error_rate(&self, cells: impl IntoIterator<Item = usize>, y: usize) -> f64 {
        let (n, e) = self.error_counts(cells, y);
        e as f64 / n as f64
    }

    /// Share of units whose report equals the truth, among units with a
    /// reportable truth.
    pub fn agreement_rate(&self) -> f64 {
        let (mut n, mut same) = (0u64, 0u64);
        for c in 0..self.n_cells {
            for y in 0..self.d_y.min(self.d_z) {
                for z in 0..self.d_z {
                    n += self.count(c, y, z);
                }
                same += self.count(c, y, y);
            }
        }
        same as f64 / n as f64
    }

    /// Population total of truth `y` in `cell`.
    pub fn total(&self, cell: usize, y: usize) -> u64 {
        (0..self.d_z).map(|z| self.count(cell, y, z)).sum()
    }

    /// Writes the population cross-tab and the per-record truths. Both files
    /// carry the ledger marker column so data loaders refuse them.
    pub fn write(&self, dir: &Path, schema: &Schema) -> Result<Vec<PathBuf>, DataError> {
        let ledger = dir.join(LEDGER_FILE);
        let mut w = csv_writer(&ledger)?;
        let mut header = vec![LEDGER_MARKER.to_string()];
        header.extend(schema.covariates.iter().map(|c| c.name.clone()));
        header.extend(["true", "reported", "count"].map(String::from));
        w.write_record(&header).map_err(csv_error(&ledger))?;
        for c in 0..self.n_cells {
            let cov = covariate_fields(schema, c);
            for y in 0..self.d_y {
                for z in 0..self.d_z {
                    let mut row = vec![(c + 1).to_string()];
                    row.extend(cov.iter().cloned());
                    row.push(schema.outcome_label(Level::from_index(y)));
                    row.push(schema.outcome_label(Level::from_index(z)));
                    row.push(self.count(c, y, z).to_string());
                    w.write_record(&row).map_err(csv_error(&ledger))?;
                }
            }
        }
        finish_csv(&ledger, w)?;
        let records = dir.join(RECORD_TRUTH_FILE);
        let mut w = csv_writer(&records)?;
        w.write_record([LEDGER_MARKER, "record", "true"]).map_err(csv_error(&records))?;
        for (i, y) in self.error_prone_truth.iter().enumerate() {
            w.write_record(["", &(i + 1).to_string(), &schema.outcome_label(*y)]).map_err(csv_error(&records))?;
        }
        finish_csv(&records, w)?;
        Ok(vec![ledger, records])
    }
}

impl Simulation {
    /// Writes `gold.csv` and `error_prone.csv` under `dir` and the ledger
    /// under `dir/truth`.
    pub fn write(&self, dir: &Path, schema: &Schema) -> Result<Vec<PathBuf>, DataError> {
        let gold = dir.join(GOLD_FILE);
        write_gold(&gold, schema, &self.gold, OUTCOME_COLUMN)?;
        let ep = dir.join(ERROR_PRONE_FILE);
        write_error_prone(&ep, schema, &self.error_prone, OUTCOME_COLUMN)?;
        let mut out = vec![gold, ep];
        out.extend(self.truth.write(&dir.join(TRUTH_DIR), schema)?);
        Ok(out)
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<(), Error> {
        let s = &self.schema;
        s.validate()?;
        let bad = |m: String| -> Error { DataError::Invalid(m).into() };
        if self.cell_probs.len() != s.n_cells() || self.theta.len() != s.n_cells() {
            return Err(bad(format!("scenario needs {} cells", s.n_cells())));
        }
        let simplex = |p: &[f64]| p.iter().all(|x| *x >= 0.0 && x.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if !simplex(&self.cell_probs) {
            return Err(bad("cell probabilities must lie in the simplex".into()));
        }
        for (c, t) in self.theta.iter().enumerate() {
            if t.len() != s.true_levels || !simplex(t) {
                return Err(bad(format!("theta row for cell {} must lie in the simplex", c + 1)));
            }
        }
        let err = self.error.compile(s)?;
        if self.error_params.len() != err.n_params() {
            return Err(ModelError::ParamLength { expected: err.n_params(), got: self.error_params.len() }.into());
        }
        let rep = self.reporting.compile(s)?;
        let t = &self.reporting_tables;
        if (t.n_groups, t.d_y, t.d_z) != (rep.n_groups, rep.d_y, rep.d_z) {
            return Err(ModelError::ReportingSpec("reporting tables do not match the reporting spec".into()).into());
        }
        if let GoldDesign::StratifiedByZ { rates } = &self.design {
            if rates.len() != s.reported_levels || rates.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
                return Err(bad(format!("stratifiedByZ needs {} rates in (0, 1]", s.reported_levels)));
            }
        }
        if self.n_gold < 2 || self.n_error < 2 || self.n_gold + self.n_error > self.population {
            return Err(bad("sample sizes must be at least 2 and fit in the population".into()));
        }
        Ok(())
    }
}

/// Stratum sample sizes proportional to `rate_h * N_h`, capped at `N_h`,
/// summing to `n`.
fn allocate(sizes: &[usize], rates: &[f64], n: usize) -> Result<Vec<usize>, Error> {
    for (h, (&size, &r)) in sizes.iter().zip(rates).enumerate() {
        if size == 0 && r > 0.0 {
            return Err(DataError::Invalid(format!("stratum {} has no population units", h + 1)).into());
        }
    }
    let target = |c: f64| -> f64 { sizes.iter().zip(rates).map(|(&s, &r)| (c * r).min(1.0) * s as f64).sum() };
    let (mut lo, mut hi) = (0.0, 1.0);
    while target(hi) < n as f64 {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(DataError::Invalid("gold sample larger than the sampled strata".into()).into());
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if target(mid) < n as f64 {
            lo = mid
        } else {
            hi = mid
        }
    }
    let exact: Vec<f64> = sizes.iter().zip(rates).map(|(&s, &r)| (hi * r).min(1.0) * s as f64).collect();
    let mut alloc: Vec<usize> = exact.iter().zip(sizes).map(|(&e, &s)| (e.floor() as usize).min(s)).collect();
    let mut short = n.saturating_sub(alloc.iter().sum());
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for h in order.into_iter().cycle().take(sizes.len() * 2) {
        if short == 0 {
            break;
        }
        if alloc[h] < sizes[h] {
            alloc[h] += 1;
            short -= 1;
        }
    }
    Ok(alloc)
}

/// Draws a finite population, applies the error and reporting mechanisms,
/// then samples the gold file (recording y) and, from the remaining units,
/// the error-prone file (recording z) by simple random sampling. Weights in
/// both files are exact inverse inclusion probabilities.
pub fn simulate_linked(sc: &SimScenario) -> Result<Simulation, Error> {
    sc.validate()?;
    let s = &sc.schema;
    let (n_cells, d_y, d_z) = (s.n_cells(), s.true_levels, s.reported_levels);
    let err = sc.error.compile(s)?;
    let rep = sc.reporting.compile(s)?;
    let mut rng = rng_stream(sc.seed, 0);

    let mut per_cell = vec![0u64; n_cells];
    sample_multinomial(sc.population as u64, &sc.cell_probs, &mut rng, &mut per_cell);
    let mut counts = vec![0u64; n_cells * d_y * d_z];
    let mut per_y = vec![0u64; d_y];
    let mut wrong = vec![0u64; d_z];
    for c in 0..n_cells {
        sample_multinomial(per_cell[c], &sc.theta[c], &mut rng, &mut per_y);
        for y in 0..d_y {
            let n = per_y[y];
            let g = err.probability(&sc.error_params, c, y);
            let e = if y >= d_z || g >= 1.0 {
                n
            } else if n == 0 || g <= 0.0 {
                0
            } else {
                Binomial::new(n, g).expect("valid binomial").sample(&mut rng)
            };
            let base = (c * d_y + y) * d_z;
            if y < d_z {
                counts[base + y] += n - e;
            }
            if e > 0 {
                sample_multinomial(e, sc.reporting_tables.row(rep.group_of_cell[c], y), &mut rng, &mut wrong);
                for z in 0..d_z {
                    counts[base + z] += wrong[z];
                }
            }
        }
    }

    let mut units: Vec<(u32, u8, u8)> = Vec::with_capacity(sc.population);
    for c in 0..n_cells {
        for y in 0..d_y {
            for z in 0..d_z {
                let k = counts[(c * d_y + y) * d_z + z] as usize;
                units.extend(std::iter::repeat_n((c as u32, y as u8, z as u8), k));
            }
        }
    }

    let mut rng = rng_stream(sc.seed, 1);
    let n_pop = units.len();
    let mut in_gold = vec![false; n_pop];
    let mut gold = Vec::with_capacity(sc.n_gold);
    // gold inclusion probability by reported level
    let mut pi_gold = vec![sc.n_gold as f64 / n_pop as f64; d_z];
    match &sc.design {
        GoldDesign::SimpleRandom => {
            let w = n_pop as f64 / sc.n_gold as f64;
            let mut picked = index::sample(&mut rng, n_pop, sc.n_gold).into_vec();
            picked.sort_unstable();
            for i in picked {
                in_gold[i] = true;
                let (c, y, _) = units[i];
                if sc.gold_drops_unreportable && y as usize >= d_z {
                    continue;
                }
                gold.push(GoldRecord { cell: c as usize, y: Level::from_index(y as usize), weight: w });
            }
        }
        GoldDesign::StratifiedByZ { rates } => {
            let mut strata: Vec<Vec<usize>> = vec![Vec::new(); d_z];
            for (i, u) in units.iter().enumerate() {
                strata[u.2 as usize].push(i);
            }
            let sizes: Vec<usize> = strata.iter().map(Vec::len).collect();
            let alloc = allocate(&sizes, rates, sc.n_gold)?;
            let mut picked = Vec::with_capacity(sc.n_gold);
            for (h, members) in strata.iter().enumerate() {
                if alloc[h] == 0 {
                    pi_gold[h] = 0.0;
                    continue;
                }
                let w = members.len() as f64 / alloc[h] as f64;
                pi_gold[h] = 1.0 / w;
                for j in index::sample(&mut rng, members.len(), alloc[h]) {
                    picked.push((members[j], w));
                }
            }
            picked.sort_unstable_by_key(|p| p.0);
            for (i, w) in picked {
                in_gold[i] = true;
                let (c, y, _) = units[i];
                if sc.gold_drops_unreportable && y as usize >= d_z {
                    continue;
                }
                gold.push(GoldRecord { cell: c as usize, y: Level::from_index(y as usize), weight: w });
            }
        }
    }

    let mut rng = rng_stream(sc.seed, 2);
    let rest: Vec<usize> = (0..n_pop).filter(|&i| !in_gold[i]).collect();
    // exact inverse inclusion probability: Pr(not in gold) * n_E / (N - n_G)
    let base_w = rest.len() as f64 / sc.n_error as f64;
    let mut picked: Vec<usize> = index::sample(&mut rng, rest.len(), sc.n_error).into_iter().map(|j| rest[j]).collect();
    picked.sort_unstable();
    let mut salary_rng = rng_stream(sc.seed, 3);
    let mut records = Vec::with_capacity(sc.n_error);
    let mut truth = Vec::with_capacity(sc.n_error);
    for i in picked {
        let (c, y, z) = units[i];
        let salary = LogNormal::new(10.8 + 0.15 * y.min(3) as f64 - 0.2 * f64::from(y == 4), 0.5)
            .expect("valid log-normal")
            .sample(&mut salary_rng);
        records.push(ErrorProneRecord {
            cell: c as usize,
            z: Level::from_index(z as usize),
            weight: base_w / (1.0 - pi_gold[z as usize]),
            extras: vec![format!("{:.0}", salary)],
        });
        truth.push(Level::from_index(y as usize));
    }
    Ok(Simulation {
        gold: GoldDataset::new(gold),
        error_prone: ErrorProneDataset::new(vec![SALARY_COLUMN.into()], records),
        truth: TruthLedger { n_cells, d_y, d_z, counts, error_prone_truth: truth },
    })
}

/// sex(M, F) x ageGroup(4) x black(no, yes) with five education levels, the
/// last of which cannot be reported.
pub fn nscg_schema() -> Schema {
    Schema::new(
        vec![
            Covariate::with_labels("sex", &["M", "F"]),
            Covariate::with_labels("ageGroup", &["1", "2", "3", "4"]),
            Covariate::with_labels("black", &["no", "yes"]),
        ],
        5,
        4,
    )
    .and_then(|s| s.with_outcome_labels(&EDUCATION_LABELS))
    .expect("static schema")
}

/// Error rate of each true level in [`TABLE1_LINKED`], and the report
/// distribution among errors. The no-degree row is all errors.
pub fn table1_rates() -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut rates = Vec::new();
    let mut reports = Vec::new();
    for (k, row) in TABLE1_LINKED.iter().enumerate() {
        let total: u64 = row.iter().sum();
        let errors: u64 = row.iter().enumerate().filter(|(l, _)| *l != k).map(|(_, n)| n).sum();
        rates.push(errors as f64 / total as f64);
        reports.push(
            row.iter()
                .enumerate()
                .map(|(l, &n)| if l == k { 0.0 } else { n as f64 / errors as f64 })
                .collect(),
        );
    }
    (rates, reports)
}

/// Shares of the true levels in [`TABLE1_LINKED`].
pub fn table1_truth_shares() -> Vec<f64> {
    let totals: Vec<f64> = TABLE1_LINKED.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let all: f64 = totals.iter().sum();
    totals.iter().map(|t| t / all).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Table1Options {
    pub population: usize,
    pub n_gold: usize,
    pub n_error: usize,
    pub design: GoldDesign,
    /// Standard deviation of the log-scale perturbation of each cell's
    /// reportable shares; 0 gives every cell the linked-table shares.
    pub tilt: f64,
    pub gold_drops_unreportable: bool,
    pub seed: u64,
}

impl Default for Table1Options {
    fn default() -> Self {
        Table1Options {
            population: 1_000_000,
            n_gold: 20_000,
            n_error: 50_000,
            design: GoldDesign::StratifiedByZ { rates: vec![0.5, 1.0, 1.0, 1.0] },
            tilt: 0.6,
            gold_drops_unreportable: true,
            seed: 1,
        }
    }
}

/// Scenario on [`nscg_schema`] whose error rates and report distributions
/// follow the rows of [`TABLE1_LINKED`] and do not depend on covariates.
pub fn table1_scenario(opts: &Table1Options) -> SimScenario {
    let schema = nscg_schema();
    let (rates, reports) = table1_rates();
    let base = table1_truth_shares();
    let age = [0.25, 0.25, 0.25, 0.25];
    let black = [0.5, 0.5];
    // the same perturbations for every seed, so seeds only vary the sampling
    let mut shape_rng = rng_stream(TABLE1_SHAPE_SEED, 0);
    let mut cell_probs = Vec::new();
    let mut theta = Vec::new();
    for c in 0..schema.n_cells() {
        let a = schema.level_in_cell(c, 1).index();
        let b = schema.level_in_cell(c, 2).index();
        cell_probs.push(0.5 * age[a] * black[b]);
        // the unreportable share stays at its table value so augmentation
        // has a total well clear of sampling noise
        let mut row: Vec<f64> = base[..4]
            .iter()
            .map(|p| {
                let e: f64 = StandardNormal.sample(&mut shape_rng);
                p * (opts.tilt * e).exp()
            })
            .collect();
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x *= (1.0 - base[4]) / sum);
        row.push(base[4]);
        theta.push(row);
    }
    let terms = vec![
        DesignTerm::Intercept,
        DesignTerm::Truth { level: Level::from_index(1) },
        DesignTerm::Truth { level: Level::from_index(2) },
        DesignTerm::Truth { level: Level::from_index(3) },
    ];
    let error = ErrorModelSpec::group_saturated(terms, vec![BetaPrior::FLAT; 4]);
    let reporting = ReportingModelSpec::by_truth(vec![]);
    let mut tables = ReportingTables::zeros(1, 5, 4);
    for (k, r) in reports.iter().enumerate() {
        tables.row_mut(0, k).copy_from_slice(r);
    }
    SimScenario {
        schema,
        population: opts.population,
        cell_probs,
        theta,
        error,
        error_params: rates[..4].to_vec(),
        reporting,
        reporting_tables: tables,
        design: opts.design.clone(),
        n_gold: opts.n_gold,
        n_error: opts.n_error,
        gold_drops_unreportable: opts.gold_drops_unreportable,
        seed: opts.seed,
    }
}

/// Expected agreement rate among reportable truths implied by a scenario.
pub fn expected_agreement(sc: &SimScenario) -> Result<f64, Error> {
    let err = sc.error.compile(&sc.schema)?;
    let d_z = sc.schema.reported_levels;
    let (mut num, mut den) = (0.0, 0.0);
    for (c, p) in sc.cell_probs.iter().enumerate() {
        for k in 0..d_z {
            let share = p * sc.theta[c][k];
            den += share;
            num += share * (1.0 - err.probability(&sc.error_params, c, k));
        }
    }
    Ok(num / den)
}
