//! Option models and intra-option model learning.
//!
//! For each state `s` and option `o` a model holds
//!
//! - `mp(x | s, o)`: probability that `o` started in `s` terminates in `x`,
//! - `mr(s, o)`: expected cumulative reward until termination,
//! - `ml(s, o)`: expected number of primitive steps until termination.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{importance_ratios, OptionSet, Transition};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptionModel {
    num_states: usize,
    num_options: usize,
    /// Indexed by `(s * num_options + o) * num_states + x`.
    mp: Vec<f64>,
    /// Indexed by `s * num_options + o`.
    mr: Vec<f64>,
    ml: Vec<f64>,
}

impl OptionModel {
    /// All-zero tables.
    pub fn zeros(num_states: usize, num_options: usize) -> Self {
        Self {
            num_states,
            num_options,
            mp: vec![0.0; num_states * num_options * num_states],
            mr: vec![0.0; num_states * num_options],
            ml: vec![0.0; num_states * num_options],
        }
    }

    pub fn from_tables(
        num_states: usize,
        num_options: usize,
        mp: Vec<f64>,
        mr: Vec<f64>,
        ml: Vec<f64>,
    ) -> Result<Self> {
        let pairs = num_states * num_options;
        if mp.len() != pairs * num_states || mr.len() != pairs || ml.len() != pairs {
            return Err(Error::Shape(format!(
                "model tables ({}, {}, {}) do not fit {num_states} states x {num_options} options",
                mp.len(),
                mr.len(),
                ml.len()
            )));
        }
        Ok(Self { num_states, num_options, mp, mr, ml })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_options(&self) -> usize {
        self.num_options
    }

    fn pair(&self, s: usize, o: usize) -> usize {
        debug_assert!(s < self.num_states && o < self.num_options);
        s * self.num_options + o
    }

    pub fn mp(&self, s: usize, o: usize, x: usize) -> f64 {
        self.mp[self.pair(s, o) * self.num_states + x]
    }

    pub fn mp_row(&self, s: usize, o: usize) -> &[f64] {
        let k = self.pair(s, o) * self.num_states;
        &self.mp[k..k + self.num_states]
    }

    pub fn mp_row_mut(&mut self, s: usize, o: usize) -> &mut [f64] {
        let k = self.pair(s, o) * self.num_states;
        &mut self.mp[k..k + self.num_states]
    }

    pub fn mr(&self, s: usize, o: usize) -> f64 {
        self.mr[self.pair(s, o)]
    }

    pub fn ml(&self, s: usize, o: usize) -> f64 {
        self.ml[self.pair(s, o)]
    }

    pub fn set_mr(&mut self, s: usize, o: usize, v: f64) {
        let k = self.pair(s, o);
        self.mr[k] = v;
    }

    pub fn set_ml(&mut self, s: usize, o: usize, v: f64) {
        let k = self.pair(s, o);
        self.ml[k] = v;
    }

    pub fn mp_table(&self) -> &[f64] {
        &self.mp
    }

    pub fn mr_table(&self) -> &[f64] {
        &self.mr
    }

    pub fn ml_table(&self) -> &[f64] {
        &self.ml
    }

    /// Options of `self` followed by options of `other`.
    pub fn concat(&self, other: &OptionModel) -> Result<Self> {
        if self.num_states != other.num_states {
            return Err(Error::Shape(format!("{} vs {} states", self.num_states, other.num_states)));
        }
        let ns = self.num_states;
        let no = self.num_options + other.num_options;
        let mut out = Self::zeros(ns, no);
        for s in 0..ns {
            for (o, (src, so)) in (0..self.num_options)
                .map(|o| (self, o))
                .chain((0..other.num_options).map(|o| (other, o)))
                .enumerate()
            {
                out.mp_row_mut(s, o).copy_from_slice(src.mp_row(s, so));
                out.set_mr(s, o, src.mr(s, so));
                out.set_ml(s, o, src.ml(s, so));
            }
        }
        Ok(out)
    }

    /// Writes every entry as `part,s,o,x,value` rows; `x` is empty for the
    /// reward and duration parts.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["part", "s", "o", "x", "value"])?;
        for s in 0..self.num_states {
            for o in 0..self.num_options {
                for (x, v) in self.mp_row(s, o).iter().enumerate() {
                    w.write_record(["p", &s.to_string(), &o.to_string(), &x.to_string(), &fmt_f64(*v)])?;
                }
                w.write_record(["r", &s.to_string(), &o.to_string(), "", &fmt_f64(self.mr(s, o))])?;
                w.write_record(["l", &s.to_string(), &o.to_string(), "", &fmt_f64(self.ml(s, o))])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table written by [`OptionModel::write_csv`]. Dimensions are
    /// taken from the largest indices present; missing entries are zero.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            part: String,
            s: usize,
            o: usize,
            x: Option<usize>,
            value: f64,
        }
        let mut rows = Vec::new();
        for rec in csv::Reader::from_reader(reader).deserialize::<Row>() {
            rows.push(rec?);
        }
        let ns = rows.iter().map(|r| r.s.max(r.x.unwrap_or(0)) + 1).max().unwrap_or(0);
        let no = rows.iter().map(|r| r.o + 1).max().unwrap_or(0);
        let mut m = Self::zeros(ns, no);
        for r in rows {
            match (r.part.as_str(), r.x) {
                ("p", Some(x)) => m.mp_row_mut(r.s, r.o)[x] = r.value,
                ("r", None) => m.set_mr(r.s, r.o, r.value),
                ("l", None) => m.set_ml(r.s, r.o, r.value),
                (part, _) => {
                    return Err(Error::Shape(format!("bad model row: part `{part}` at s={}, o={}", r.s, r.o)));
                }
            }
        }
        Ok(m)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Shortest representation that round-trips exactly.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Max-abs error per part: `(mp, mr, ml)`.
pub fn model_error(m: &OptionModel, exact: &OptionModel) -> Result<(f64, f64, f64)> {
    if m.num_states != exact.num_states || m.num_options != exact.num_options {
        return Err(Error::Shape(format!(
            "model is {}x{}, reference is {}x{}",
            m.num_states, m.num_options, exact.num_states, exact.num_options
        )));
    }
    let max_abs = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok((max_abs(&m.mp, &exact.mp), max_abs(&m.mr, &exact.mr), max_abs(&m.ml, &exact.ml)))
}

/// One intra-option model-learning step with a constant stepsize.
pub fn model_learning_update(
    m: &mut OptionModel,
    t: &Transition,
    executing: usize,
    opts: &OptionSet,
    alpha: f64,
) -> Vec<usize> {
    model_learning_update_with(m, t, executing, opts, |_, _| alpha)
}

/// One intra-option model-learning step. `step(o, ρ)` returns the stepsize for
/// `(t.state, o)`; it is called once per option with `ρ > 0`, which lets the
/// caller keep visit counts. Every option consistent with the observed action
/// moves toward its one-step target built from the pre-update tables.
///
/// Returns the options whose rows were updated.
pub fn model_learning_update_with(
    m: &mut OptionModel,
    t: &Transition,
    executing: usize,
    opts: &OptionSet,
    mut step: impl FnMut(usize, f64) -> f64,
) -> Vec<usize> {
    let (s, s2) = (t.state, t.next_state);
    let ns = m.num_states;
    let ratios = importance_ratios(opts, s, t.action, executing);
    let mut target = vec![0.0; ns];
    let mut updated = Vec::with_capacity(ratios.len());
    for (o, rho) in ratios {
        let a = step(o, rho) * rho;
        let b = opts.get(o).beta(s2);
        // Snapshot of row S' for this option: when S' == S the row is about to change.
        let next_row = m.mp_row(s2, o);
        for x in 0..ns {
            target[x] = (1.0 - b) * next_row[x];
        }
        target[s2] += b;
        let row = m.mp_row_mut(s, o);
        for x in 0..ns {
            row[x] += a * (target[x] - row[x]);
        }
        let mr_target = t.reward + (1.0 - b) * m.mr(s2, o);
        let ml_target = 1.0 + (1.0 - b) * m.ml(s2, o);
        let k = m.pair(s, o);
        m.mr[k] += a * (mr_target - m.mr[k]);
        m.ml[k] += a * (ml_target - m.ml[k]);
        updated.push(o);
    }
    updated
}
