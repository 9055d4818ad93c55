//! Retained draws from one or more chains, and the columnar draws file.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::mcmc::loglik::LoglikParts;
use crate::model::ModelSpec;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainStats {
    /// Mean acceptance of the student-effect Metropolis step, when used.
    pub delta_acceptance: Option<f64>,
    /// Post-burn-in acceptance rate per selection coefficient.
    pub selection_acceptance: Vec<f64>,
    /// Frozen random-walk step size per selection coefficient.
    pub selection_steps: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainDraws {
    pub chain: usize,
    /// RNG stream derived from the root seed for this chain.
    pub stream: u64,
    /// Sweep number (1-based, counted after burn-in) of each stored draw.
    pub iterations: Vec<usize>,
    /// Row-major `draws x parameters`.
    pub values: Vec<f64>,
    pub loglik: Vec<LoglikParts>,
    pub stats: ChainStats,
}

impl ChainDraws {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn draw(&self, k: usize, n_params: usize) -> &[f64] {
        &self.values[k * n_params..(k + 1) * n_params]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainArchive {
    pub spec: ModelSpec,
    pub root_seed: u64,
    pub names: Vec<String>,
    pub chains: Vec<ChainDraws>,
}

impl ChainArchive {
    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Draws of one parameter, per chain.
    pub fn param_chains(&self, index: usize) -> Vec<Vec<f64>> {
        let p = self.n_params();
        self.chains
            .iter()
            .map(|c| (0..c.len()).map(|k| c.values[k * p + index]).collect())
            .collect()
    }

    /// Posterior mean of every parameter across all chains.
    pub fn posterior_means(&self) -> Vec<f64> {
        let p = self.n_params();
        let mut sums = vec![0.0; p];
        let mut n = 0usize;
        for c in &self.chains {
            for k in 0..c.len() {
                for (s, v) in sums.iter_mut().zip(c.draw(k, p)) {
                    *s += v;
                }
            }
            n += c.len();
        }
        sums.iter().map(|s| s / n as f64).collect()
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(ChainDraws::len).sum()
    }

    /// Columnar file: `chain,iteration,loglik_scores,loglik_selection,<names..>`.
    /// Values use the shortest representation that parses back exactly.
    pub fn write_draws<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            "chain".to_string(),
            "iteration".to_string(),
            "loglik_scores".to_string(),
            "loglik_selection".to_string(),
        ];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        let p = self.n_params();
        let mut record = Vec::with_capacity(p + 4);
        for c in &self.chains {
            for k in 0..c.len() {
                record.clear();
                record.push(c.chain.to_string());
                record.push(c.iterations[k].to_string());
                record.push(format!("{:?}", c.loglik[k].scores));
                record.push(format!("{:?}", c.loglik[k].selection));
                record.extend(c.draw(k, p).iter().map(|v| format!("{v:?}")));
                w.write_record(&record)?;
            }
        }
        w.flush().map_err(|e| Error::io("<draws writer>", e))?;
        Ok(())
    }

    /// Reads a draws file written by [`write_draws`](Self::write_draws).
    /// Chain streams and statistics are not stored in the file and come
    /// back as defaults; the run manifest carries them.
    pub fn read_draws<R: Read>(reader: R, spec: ModelSpec, root_seed: u64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
        let header = rdr.headers()?.clone();
        let fixed = ["chain", "iteration", "loglik_scores", "loglik_selection"];
        if header.len() < fixed.len() || fixed.iter().zip(header.iter()).any(|(a, b)| *a != b) {
            return Err(Error::MalformedRow {
                row: 0,
                message: format!("draws header must start with {}", fixed.join(",")),
            });
        }
        let names: Vec<String> = header
            .iter()
            .skip(fixed.len())
            .map(str::to_string)
            .collect();
        let p = names.len();
        let mut chains: Vec<ChainDraws> = Vec::new();
        let mut record = csv::StringRecord::new();
        let mut row = 0;
        while rdr.read_record(&mut record)? {
            row += 1;
            if record.len() != p + fixed.len() {
                return Err(Error::MalformedRow {
                    row,
                    message: format!(
                        "expected {} fields, found {}",
                        p + fixed.len(),
                        record.len()
                    ),
                });
            }
            let bad = |what: &str| Error::MalformedRow {
                row,
                message: format!("invalid {what}"),
            };
            let chain: usize = record[0].parse().map_err(|_| bad("chain"))?;
            let iteration: usize = record[1].parse().map_err(|_| bad("iteration"))?;
            let scores: f64 = record[2].parse().map_err(|_| bad("loglik_scores"))?;
            let selection: f64 = record[3].parse().map_err(|_| bad("loglik_selection"))?;
            let pos = match chains.iter().position(|c| c.chain == chain) {
                Some(pos) => pos,
                None => {
                    chains.push(ChainDraws {
                        chain,
                        stream: chain as u64,
                        iterations: Vec::new(),
                        values: Vec::new(),
                        loglik: Vec::new(),
                        stats: ChainStats::default(),
                    });
                    chains.len() - 1
                }
            };
            let c = &mut chains[pos];
            c.iterations.push(iteration);
            c.loglik.push(LoglikParts { scores, selection });
            for (i, field) in record.iter().skip(fixed.len()).enumerate() {
                let v: f64 = field.parse().map_err(|_| bad(&names[i]))?;
                c.values.push(v);
            }
        }
        if let Some(first) = chains.first() {
            if chains.iter().any(|c| c.len() != first.len()) {
                return Err(Error::Validation(
                    "chains in draws file differ in length".into(),
                ));
            }
        }
        Ok(ChainArchive {
            spec,
            root_seed,
            names,
            chains,
        })
    }

    /// `key=value` lines describing the run.
    pub fn manifest(&self) -> String {
        let s = &self.spec;
        let mut out = String::new();
        out.push_str(&format!("model={}\n", s.kind.name()));
        out.push_str(&format!("parameterization={:?}\n", s.parameterization).to_lowercase());
        out.push_str(&format!(
            "companion={}\n",
            s.companion
                .map_or("none".to_string(), |f| format!("{f:?}").to_lowercase())
        ));
        out.push_str(&format!("root_seed={}\n", self.root_seed));
        out.push_str(&format!("chains={}\n", self.chains.len()));
        out.push_str(&format!("burn_in={}\n", s.sampler.burn_in));
        out.push_str(&format!("retained={}\n", s.sampler.retained));
        out.push_str(&format!("thin={}\n", s.sampler.thin));
        out.push_str(&format!("parameters={}\n", self.n_params()));
        for c in &self.chains {
            out.push_str(&format!("chain.{}.stream={}\n", c.chain, c.stream));
            if let Some(a) = c.stats.delta_acceptance {
                out.push_str(&format!("chain.{}.delta_acceptance={a:.4}\n", c.chain));
            }
            for (k, (a, step)) in c
                .stats
                .selection_acceptance
                .iter()
                .zip(&c.stats.selection_steps)
                .enumerate()
            {
                out.push_str(&format!(
                    "chain.{}.selection.{k}.acceptance={a:.4}\nchain.{}.selection.{k}.step={step:.6}\n",
                    c.chain, c.chain
                ));
            }
        }
        out
    }
}
