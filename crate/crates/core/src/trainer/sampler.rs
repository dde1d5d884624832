use crate::data::{DomainDataset, Split};
use crate::error::{Error, Result};
use crate::labelprop::one_hot;
use crate::losses::{PriorDistribution, Targets};
use crate::numerics::Matrix;
use crate::rng::Rng;

/// One stratified minibatch.
#[derive(Clone, Debug)]
pub struct Minibatch {
    /// Dataset row of each sample.
    pub indices: Vec<usize>,
    pub inputs: Matrix,
    pub targets: Targets,
    /// Selected domain ids, ascending. Column `j` of `local_domains`
    /// stands for `selected[j]`.
    pub selected: Vec<usize>,
    /// n x K one-hot over the selected domains.
    pub local_domains: Matrix,
    /// n x S one-hot over all training domains.
    pub global_domains: Matrix,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Uniform over the selected domains by construction.
    pub fn prior(&self) -> PriorDistribution {
        PriorDistribution::from_domains(&self.local_domains)
    }
}

/// Draws `K` distinct training domains per batch and an equal number of
/// training rows from each.
#[derive(Clone, Debug)]
pub struct DomainSampler {
    /// Training rows of each training domain, by position in `domains`.
    pools: Vec<Vec<usize>>,
    domains: Vec<usize>,
    domains_per_batch: usize,
    samples_per_domain: usize,
}

impl DomainSampler {
    pub fn new(dataset: &DomainDataset, domains_per_batch: Option<usize>, samples_per_domain: usize) -> Result<Self> {
        let domains = dataset.train_domains();
        let k = domains_per_batch.unwrap_or(domains.len());
        if k == 0 || k > domains.len() {
            return Err(Error::Config(vec![format!(
                "domains_per_batch {k} must lie in 1..={}",
                domains.len()
            )]));
        }
        if samples_per_domain == 0 {
            return Err(Error::Config(vec!["samples_per_domain must be positive".into()]));
        }
        let train = dataset.indices(Split::Train);
        let pools = domains
            .iter()
            .map(|&d| train.iter().copied().filter(|&i| dataset.domains[i] == d).collect())
            .collect();
        Ok(DomainSampler {
            pools,
            domains,
            domains_per_batch: k,
            samples_per_domain,
        })
    }

    /// Sorted ids of all training domains.
    pub fn domains(&self) -> &[usize] {
        &self.domains
    }

    pub fn batch_size(&self) -> usize {
        self.domains_per_batch * self.samples_per_domain
    }

    /// Rows are grouped by domain in ascending domain order. Pools smaller
    /// than `samples_per_domain` are sampled with replacement.
    pub fn sample(&self, dataset: &DomainDataset, rng: &mut Rng) -> Result<Minibatch> {
        let mut picks = rng.choose_distinct(self.domains.len(), self.domains_per_batch);
        picks.sort_unstable();
        let mut indices = Vec::with_capacity(self.batch_size());
        let mut local = Vec::with_capacity(self.batch_size());
        let mut global = Vec::with_capacity(self.batch_size());
        for (col, &p) in picks.iter().enumerate() {
            let pool = &self.pools[p];
            if pool.len() >= self.samples_per_domain {
                indices.extend(rng.choose_distinct(pool.len(), self.samples_per_domain).into_iter().map(|j| pool[j]));
            } else {
                indices.extend((0..self.samples_per_domain).map(|_| pool[rng.below(pool.len())]));
            }
            local.extend(std::iter::repeat_n(col, self.samples_per_domain));
            global.extend(std::iter::repeat_n(p, self.samples_per_domain));
        }
        Ok(Minibatch {
            inputs: dataset.inputs.select_rows(&indices)?,
            targets: dataset.targets.select(&indices),
            selected: picks.iter().map(|&p| self.domains[p]).collect(),
            local_domains: one_hot(&local, picks.len())?,
            global_domains: one_hot(&global, self.domains.len())?,
            indices,
        })
    }
}
