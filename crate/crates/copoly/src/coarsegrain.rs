//! Coarse-grained block decomposition of the partition function.
//!
//! The system `{1..N}` is cut into `N/k` blocks of length `k`. Every renewal
//! path visits some increasing set of blocks `i_1 < ... < i_l = N/k` (the
//! blocks containing the contact points `n_r`), and the partition function
//! splits exactly into a sum over these block skeletons. Each skeleton's
//! contribution `Zhat` factorizes into dense segment values `Z_{n_r, j_r}`
//! (at most `k-1` long), single-gap kernel factors, and excursion weights
//! over the empty stretches; a restricted variant intersects each excursion
//! interval with the visited-block neighborhood `W`.

use crate::disorder::DisorderSample;
use crate::logspace::{logsumexp, LogSum};
use crate::partition::{log_phi, quenched_log_z, ModelParams};
use crate::renewal::InterArrivalLaw;
use crate::{Error, Result, SCHEMA_VERSION};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Default limit on the number of blocks in an exhaustive enumeration
/// (2^19 skeletons); beyond this the identity check is signaled as
/// combinatorially infeasible rather than attempted.
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

/// One block skeleton `i_1 < ... < i_l = N/k` with its derived sets.
#[derive(Clone, Debug)]
pub struct BlockConfig {
    k: usize,
    n_blocks: usize,
    indices: Vec<usize>,
    /// M: visited blocks plus the successor of each non-terminal one.
    m_set: Vec<usize>,
    m_mask: Vec<bool>,
    /// J: positions r with `i_r > i_{r-1} + 2` (a full empty block between).
    j_set: Vec<usize>,
}

impl BlockConfig {
    pub fn new(k: usize, n_blocks: usize, indices: Vec<usize>) -> Result<Self> {
        if k == 0 || n_blocks == 0 {
            return Err(Error::BadBlockConfig(
                "k and n_blocks must be positive".into(),
            ));
        }
        if indices.is_empty() {
            return Err(Error::BadBlockConfig("empty index set".into()));
        }
        if *indices.last().unwrap() != n_blocks {
            return Err(Error::BadBlockConfig(format!(
                "last index {} must equal n_blocks = {n_blocks}",
                indices.last().unwrap()
            )));
        }
        if indices[0] < 1 || indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::BadBlockConfig(
                "indices must be strictly increasing and >= 1".into(),
            ));
        }
        let ell = indices.len();
        let mut m_set: Vec<usize> = indices.clone();
        m_set.extend(indices[..ell - 1].iter().map(|i| i + 1));
        m_set.sort_unstable();
        m_set.dedup();
        let mut m_mask = vec![false; n_blocks + 1];
        for &b in &m_set {
            m_mask[b] = true;
        }
        let mut j_set = Vec::new();
        let mut prev = 0usize;
        for (r, &i) in indices.iter().enumerate() {
            if i > prev + 2 {
                j_set.push(r + 1);
            }
            prev = i;
        }
        Ok(BlockConfig {
            k,
            n_blocks,
            indices,
            m_set,
            m_mask,
            j_set,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    /// Total system size `N = k * n_blocks`.
    pub fn n(&self) -> usize {
        self.k * self.n_blocks
    }

    /// Number of visited blocks `l`.
    pub fn ell(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn m_set(&self) -> &[usize] {
        &self.m_set
    }

    pub fn j_set(&self) -> &[usize] {
        &self.j_set
    }

    /// `|W| = k |M|`.
    pub fn w_size(&self) -> usize {
        self.k * self.m_set.len()
    }

    /// 1-based sites of W, ascending (for building tilts).
    pub fn w_sites(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.w_size());
        for &b in &self.m_set {
            let start = (b - 1) * self.k + 1;
            out.extend(start..start + self.k);
        }
        out
    }

    /// Block index containing a 1-based site.
    #[inline]
    pub fn block_of(&self, site: usize) -> usize {
        (site - 1) / self.k + 1
    }

    /// Whether a site belongs to `W`.
    #[inline]
    pub fn in_w(&self, site: usize) -> bool {
        self.m_mask[self.block_of(site)]
    }
}

/// Streams every skeleton ending at `n_blocks`, exactly once
/// (`2^{n_blocks - 1}` of them: each subset of the interior blocks).
pub fn enumerate_configs(
    k: usize,
    n_blocks: usize,
    cap: usize,
) -> Result<impl Iterator<Item = BlockConfig>> {
    if n_blocks == 0 {
        return Err(Error::BadBlockConfig("n_blocks must be positive".into()));
    }
    if n_blocks > cap {
        return Err(Error::EnumerationCap { n_blocks, cap });
    }
    let total: u64 = 1 << (n_blocks - 1);
    Ok((0..total).map(move |mask| {
        let mut indices = Vec::with_capacity(n_blocks);
        for b in 1..n_blocks {
            if mask >> (b - 1) & 1 == 1 {
                indices.push(b);
            }
        }
        indices.push(n_blocks);
        BlockConfig::new(k, n_blocks, indices).expect("enumerated skeleton is valid")
    }))
}

/// log phi over the gap interval `(a, b]`, optionally intersected with W.
fn gap_log_phi(
    sample: &DisorderSample,
    params: &ModelParams,
    config: &BlockConfig,
    a: usize,
    b: usize,
    restrict_to_w: bool,
) -> f64 {
    if b == a {
        return 0.0;
    }
    if !restrict_to_w {
        let sum = sample.prefix()[b] - sample.prefix()[a];
        return log_phi(b - a, sum, params);
    }
    let k = config.k();
    let prefix = sample.prefix();
    let mut len = 0usize;
    let mut sum = 0.0;
    for block in config.block_of(a + 1)..=config.block_of(b) {
        if config.m_mask[block] {
            let lo = ((block - 1) * k + 1).max(a + 1);
            let hi = (block * k).min(b);
            if lo <= hi {
                len += hi - lo + 1;
                sum += prefix[hi] - prefix[lo - 1];
            }
        }
    }
    log_phi(len, sum, params)
}

/// Memoized dense segment tables: `seg(n)[d] = log Z_{n, n+d}` for
/// `d = 0..=k-1` (shifted disorder view, no copying).
struct SegmentTables<'a> {
    law: &'a InterArrivalLaw,
    sample: &'a DisorderSample,
    params: &'a ModelParams,
    k: usize,
    n: usize,
    cache: Vec<Option<Vec<f64>>>,
}

impl<'a> SegmentTables<'a> {
    fn new(
        law: &'a InterArrivalLaw,
        sample: &'a DisorderSample,
        params: &'a ModelParams,
        k: usize,
        n: usize,
    ) -> Self {
        SegmentTables {
            law,
            sample,
            params,
            k,
            n,
            cache: vec![None; n + 1],
        }
    }

    fn get(&mut self, start: usize) -> Result<&[f64]> {
        if self.cache[start].is_none() {
            let len = (self.k - 1).min(self.n - start);
            let table = crate::partition::quenched_table_shifted(
                self.law,
                self.sample,
                self.params,
                start,
                len,
            )?;
            self.cache[start] = Some(table);
        }
        Ok(self.cache[start].as_ref().unwrap().as_slice())
    }
}

/// Sites of one block, clipped to the system.
fn block_sites(block: usize, k: usize, n: usize) -> std::ops::RangeInclusive<usize> {
    ((block - 1) * k + 1)..=(block * k).min(n)
}

/// Evaluates the skeleton contribution `Zhat` (log domain) by dynamic
/// programming over the contact pairs `(n_r, j_r)`; `restrict_phi_to_w`
/// intersects every excursion interval with `W`, yielding the restricted
/// variant used by the change-of-measure step.
pub fn zhat(
    law: &InterArrivalLaw,
    sample: &DisorderSample,
    params: &ModelParams,
    config: &BlockConfig,
    restrict_phi_to_w: bool,
) -> Result<f64> {
    let n = config.n();
    let k = config.k();
    if n > sample.len() {
        return Err(Error::IndexOutOfRange { a: 0, b: n, n: sample.len() });
    }
    if n > law.n_max() {
        return Err(Error::BeyondTruncation { n, n_max: law.n_max() });
    }
    let mut segments = SegmentTables::new(law, sample, params, k, n);
    let ell = config.ell();
    let indices = config.indices();

    // the interval [n_r, j_r] must sit inside W
    let assert_in_w = |lo: usize, hi: usize| {
        for block in config.block_of(lo)..=config.block_of(hi.max(lo)) {
            assert!(
                config.m_mask[block],
                "segment [{lo}, {hi}] leaves W at block {block}"
            );
        }
    };

    if ell == 1 {
        let mut acc = LogSum::new();
        for n1 in block_sites(indices[0], k, n) {
            let base = gap_log_phi(sample, params, config, 0, n1, restrict_phi_to_w)
                + law.log_mass(n1);
            if base == f64::NEG_INFINITY {
                continue;
            }
            assert_in_w(n1, n);
            let seg = segments.get(n1)?;
            acc.push(base + seg[n - n1]);
        }
        return Ok(acc.value());
    }

    // state[(n_r - block_start) * k + d] = log weight through Z_{n_r, n_r + d}
    let mut state = vec![f64::NEG_INFINITY; k * k];
    let first_start = (indices[0] - 1) * k + 1;
    for n1 in block_sites(indices[0], k, n) {
        let base =
            gap_log_phi(sample, params, config, 0, n1, restrict_phi_to_w) + law.log_mass(n1);
        if base == f64::NEG_INFINITY {
            continue;
        }
        let seg = segments.get(n1)?;
        for d in 0..k.min(seg.len()) {
            let v = base + seg[d];
            if v > f64::NEG_INFINITY {
                assert_in_w(n1, n1 + d);
                state[(n1 - first_start) * k + d] = v;
            }
        }
    }

    for r in 1..ell {
        let prev_start = (indices[r - 1] - 1) * k + 1;
        let last_stage = r == ell - 1;
        let mut next = vec![f64::NEG_INFINITY; k * k];
        let mut acc = LogSum::new();
        for n_next in block_sites(indices[r], k, n) {
            // transition weight aggregated over all previous (n_r, j_r)
            let mut trans = LogSum::new();
            for (slot, &val) in state.iter().enumerate() {
                if val == f64::NEG_INFINITY {
                    continue;
                }
                let n_prev = prev_start + slot / k;
                if n_next < n_prev + k {
                    continue;
                }
                let j_prev = n_prev + slot % k;
                let gap = n_next - j_prev;
                let w = gap_log_phi(sample, params, config, j_prev, n_next, restrict_phi_to_w)
                    + law.log_mass(gap);
                trans.push(val + w);
            }
            let arrived = trans.value();
            if arrived == f64::NEG_INFINITY {
                continue;
            }
            let seg = segments.get(n_next)?;
            if last_stage {
                assert_in_w(n_next, n);
                acc.push(arrived + seg[n - n_next]);
            } else {
                let next_start = (indices[r] - 1) * k + 1;
                for d in 0..k.min(seg.len()) {
                    let v = arrived + seg[d];
                    if v > f64::NEG_INFINITY {
                        assert_in_w(n_next, n_next + d);
                        let slot = &mut next[(n_next - next_start) * k + d];
                        *slot = logsumexp(*slot, v);
                    }
                }
            }
        }
        if last_stage {
            return Ok(acc.value());
        }
        state = next;
    }
    unreachable!("loop returns at the last stage");
}

/// Result of verifying the block-decomposition identity at one parameter set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecomposeReport {
    pub n: usize,
    pub k: usize,
    pub lambda: f64,
    pub h: f64,
    pub seed: u64,
    pub direct_log: f64,
    pub sum_log: f64,
    pub rel_err: f64,
    pub n_configs: u64,
    pub schema_version: u32,
}

/// Sums `Zhat` over every skeleton and compares with the direct recursion.
pub fn decompose_check(
    law: &InterArrivalLaw,
    sample: &DisorderSample,
    params: &ModelParams,
    n: usize,
    k: usize,
    cap: usize,
) -> Result<DecomposeReport> {
    if k == 0 || n % k != 0 {
        return Err(Error::BadBlockConfig(format!(
            "system size {n} is not a multiple of the block length {k}"
        )));
    }
    let n_blocks = n / k;
    if n_blocks > cap {
        return Err(Error::EnumerationCap { n_blocks, cap });
    }
    let direct = quenched_log_z(law, sample, params, n)?.log_z(n);
    // skeletons are independent; evaluate in parallel, reduce in mask order
    let n_configs: u64 = 1 << (n_blocks - 1);
    let values: Result<Vec<f64>> = (0..n_configs)
        .into_par_iter()
        .map(|mask| {
            let mut indices = Vec::with_capacity(n_blocks);
            for b in 1..n_blocks {
                if mask >> (b - 1) & 1 == 1 {
                    indices.push(b);
                }
            }
            indices.push(n_blocks);
            let config = BlockConfig::new(k, n_blocks, indices)?;
            zhat(law, sample, params, &config, false)
        })
        .collect();
    let mut acc = LogSum::new();
    for v in values? {
        acc.push(v);
    }
    let sum = acc.value();
    let rel_err = (sum - direct).exp_m1().abs();
    Ok(DecomposeReport {
        n,
        k,
        lambda: params.lambda,
        h: params.h,
        seed: sample.seed(),
        direct_log: direct,
        sum_log: sum,
        rel_err,
        n_configs,
        schema_version: SCHEMA_VERSION,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::sample;
    use crate::partition::phi;
    use crate::renewal::{make_power_law, make_srw_law};

    fn splitmix(state: &mut u64) -> u64 {
        *state = state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_configs(4, 1, 20).unwrap().count(), 1);
        assert_eq!(enumerate_configs(4, 4, 20).unwrap().count(), 8);
        assert_eq!(enumerate_configs(4, 6, 20).unwrap().count(), 32);
        assert!(matches!(
            enumerate_configs(4, 21, 20),
            Err(Error::EnumerationCap { .. })
        ));
    }

    #[test]
    fn single_block_skeleton() {
        let configs: Vec<_> = enumerate_configs(4, 1, 20).unwrap().collect();
        assert_eq!(configs[0].ell(), 1);
        assert_eq!(configs[0].indices(), &[1]);
        assert_eq!(configs[0].m_set(), &[1]);
    }

    #[test]
    fn m_set_size_bounds() {
        for config in enumerate_configs(4, 6, 20).unwrap() {
            let ell = config.ell();
            let m = config.m_set().len();
            assert!(m >= 1 && m < 2 * ell, "|M|={m}, l={ell}");
            assert_eq!(config.w_size(), 4 * m);
        }
    }

    #[test]
    fn blocks_partition_the_system() {
        let config = BlockConfig::new(4, 6, vec![2, 3, 6]).unwrap();
        let mut seen = [0u32; 25];
        for block in 1..=6 {
            for site in block_sites(block, 4, 24) {
                seen[site] += 1;
                assert_eq!(config.block_of(site), block);
            }
        }
        assert!(seen[1..].iter().all(|&c| c == 1));
    }

    #[test]
    fn derived_sets_match_incremental_computation() {
        // definition-based sets vs a single scan over consecutive pairs
        let mut state = 77u64;
        for _ in 0..10_000 {
            let n_blocks = 1 + (splitmix(&mut state) % 24) as usize;
            let mut indices: Vec<usize> = (1..n_blocks)
                .filter(|_| splitmix(&mut state) & 1 == 1)
                .collect();
            indices.push(n_blocks);
            let config = BlockConfig::new(3, n_blocks, indices.clone()).unwrap();

            let ell = indices.len();
            let mut m_count = ell;
            for r in 0..ell - 1 {
                if indices[r + 1] > indices[r] + 1 {
                    m_count += 1;
                }
            }
            assert_eq!(config.m_set().len(), m_count);

            let mut j_inc = Vec::new();
            let mut prev = 0;
            for (r, &i) in indices.iter().enumerate() {
                if i > prev + 2 {
                    j_inc.push(r + 1);
                }
                prev = i;
            }
            assert_eq!(config.j_set(), j_inc.as_slice());
        }
    }

    #[test]
    fn w_sites_cover_m_blocks() {
        let config = BlockConfig::new(4, 4, vec![2, 4]).unwrap();
        // M = {2, 3, 4}, W = sites 5..16
        assert_eq!(config.m_set(), &[2, 3, 4]);
        assert_eq!(config.w_sites(), (5..=16).collect::<Vec<_>>());
        assert!(!config.in_w(4));
        assert!(config.in_w(5));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(BlockConfig::new(4, 4, vec![]).is_err());
        assert!(BlockConfig::new(4, 4, vec![2, 3]).is_err());
        assert!(BlockConfig::new(4, 4, vec![3, 2, 4]).is_err());
        assert!(BlockConfig::new(4, 4, vec![0, 4]).is_err());
    }

    /// Brute-force oracle: renewal-subset masses bucketed by skeleton.
    fn subset_oracle(
        law: &InterArrivalLaw,
        omega: &DisorderSample,
        params: &ModelParams,
        n: usize,
        k: usize,
    ) -> std::collections::HashMap<Vec<usize>, f64> {
        let mut buckets: std::collections::HashMap<Vec<usize>, f64> = Default::default();
        for mask in 0u64..(1 << (n - 1)) {
            let mut points = vec![0usize];
            for site in 1..n {
                if mask >> (site - 1) & 1 == 1 {
                    points.push(site);
                }
            }
            points.push(n);
            let mut term = 1.0f64;
            for w in points.windows(2) {
                let gap = w[1] - w[0];
                let os = omega.interval_sum(w[0], w[1]).unwrap();
                term *= law.mass(gap) * phi(gap, os, params);
            }
            if term == 0.0 {
                continue;
            }
            // walk the skeleton: n_r = first point after j_{r-1}, j_r = last
            // point not exceeding n_r + k - 1, i_r = block of n_r
            let last_block = n / k;
            let mut skeleton = Vec::new();
            let mut pos = 0usize;
            loop {
                let n_r = *points.iter().find(|&&t| t > pos).unwrap();
                let block = (n_r - 1) / k + 1;
                skeleton.push(block);
                if block == last_block {
                    break;
                }
                pos = *points.iter().filter(|&&t| t <= n_r + k - 1).last().unwrap();
            }
            *buckets.entry(skeleton).or_insert(0.0) += term;
        }
        buckets
    }

    #[test]
    fn zhat_matches_subset_oracle_per_skeleton() {
        // every skeleton's Zhat equals the oracle mass of the renewal subsets
        // that map to it (lambda > 0 exercises the phi factors too)
        let k = 4;
        let n = 12;
        let omega = sample(3, n, None);
        for law in [make_power_law(0.5, 64).unwrap(), make_srw_law(64).unwrap()] {
            for (lambda, h) in [(0.0, 0.0), (0.7, 0.25)] {
                let params = ModelParams::new(lambda, h).unwrap();
                let oracle = subset_oracle(&law, &omega, &params, n, k);
                for config in enumerate_configs(k, n / k, 20).unwrap() {
                    let got = zhat(&law, &omega, &params, &config, false).unwrap();
                    let want = oracle.get(config.indices()).copied().unwrap_or(0.0);
                    if want == 0.0 {
                        assert_eq!(got, f64::NEG_INFINITY, "skeleton {:?}", config.indices());
                    } else {
                        assert!(
                            (got - want.ln()).abs() < 1e-10,
                            "{:?} skeleton {:?}: {got} vs {}",
                            law.kind(),
                            config.indices(),
                            want.ln()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn zhat_single_block_equals_full_partition() {
        // N = k: the only skeleton is the whole system
        let law = make_power_law(0.5, 64).unwrap();
        let omega = sample(5, 4, None);
        let params = ModelParams::new(0.9, 0.4).unwrap();
        let config = BlockConfig::new(4, 1, vec![1]).unwrap();
        let got = zhat(&law, &omega, &params, &config, false).unwrap();
        let want = quenched_log_z(&law, &omega, &params, 4).unwrap().log_z(4);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn restriction_is_identity_when_w_covers_all_gaps() {
        let law = make_power_law(0.5, 64).unwrap();
        let omega = sample(7, 16, None);
        let params = ModelParams::new(0.6, 0.3).unwrap();
        // dense skeleton: every block visited, so W is everything
        let config = BlockConfig::new(4, 4, vec![1, 2, 3, 4]).unwrap();
        assert_eq!(config.m_set(), &[1, 2, 3, 4]);
        let plain = zhat(&law, &omega, &params, &config, false).unwrap();
        let restricted = zhat(&law, &omega, &params, &config, true).unwrap();
        assert!((plain - restricted).abs() < 1e-12);
        // single-block system: the only gap (0, n_1] sits inside W = B_1
        let small = BlockConfig::new(4, 1, vec![1]).unwrap();
        let omega4 = sample(8, 4, None);
        let a = zhat(&law, &omega4, &params, &small, false).unwrap();
        let b = zhat(&law, &omega4, &params, &small, true).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn restricted_zhat_drops_out_of_w_weight() {
        // a skeleton with an unvisited stretch: restricting phi changes the
        // value (sanity that the restriction is not a no-op)
        let law = make_power_law(0.5, 64).unwrap();
        let omega = sample(9, 16, None);
        let params = ModelParams::new(0.8, 0.2).unwrap();
        let config = BlockConfig::new(4, 4, vec![4]).unwrap();
        let plain = zhat(&law, &omega, &params, &config, false).unwrap();
        let restricted = zhat(&law, &omega, &params, &config, true).unwrap();
        assert!((plain - restricted).abs() > 1e-6);
    }

    #[test]
    fn decomposition_identity_smoke() {
        let mut state = 2u64;
        for law in [make_power_law(0.5, 64).unwrap(), make_srw_law(64).unwrap()] {
            for &(n, k) in &[(8usize, 4usize), (16, 4)] {
                let lambda = (splitmix(&mut state) % 1000) as f64 / 1000.0;
                let h = lambda * (splitmix(&mut state) % 1000) as f64 / 1000.0;
                let params = ModelParams::new(lambda, h).unwrap();
                let omega = sample(splitmix(&mut state), n, None);
                let report = decompose_check(&law, &omega, &params, n, k, 20).unwrap();
                assert!(
                    report.rel_err < 1e-9,
                    "{:?} n={n}: rel_err {}",
                    law.kind(),
                    report.rel_err
                );
                assert_eq!(report.n_configs, 1 << (n / k - 1));
            }
        }
    }

    #[test]
    fn decompose_check_validates_input() {
        let law = make_power_law(0.5, 64).unwrap();
        let omega = sample(1, 30, None);
        let params = ModelParams::new(0.5, 0.1).unwrap();
        assert!(matches!(
            decompose_check(&law, &omega, &params, 30, 4, 20),
            Err(Error::BadBlockConfig(_))
        ));
        assert!(matches!(
            decompose_check(&law, &omega, &params, 24, 1, 20),
            Err(Error::EnumerationCap { .. })
        ));
    }
}
