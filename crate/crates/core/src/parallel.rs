//! Data-parallel kernels with sequential fallbacks.
//!
//! Each kernel has a `_seq` form that is always compiled and, with the
//! `parallel` feature, a `_par` form backed by rayon. The un-suffixed entry
//! point picks the parallel form when the feature is enabled. Both forms
//! produce identical output: parallel work only computes scores, and the final
//! ordering is a total order applied afterwards.

use std::cmp::Ordering;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::embedding::{cosine, DimensionMismatch, Embedding};

/// A scored vector record.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub record_id: String,
    pub similarity: f64,
}

/// Similarity descending, record id ascending.
pub fn rank_order(a: &Scored, b: &Scored) -> Ordering {
    b.similarity
        .partial_cmp(&a.similarity)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.record_id.cmp(&b.record_id))
}

fn select_top_k(mut scored: Vec<Scored>, k: usize) -> Vec<Scored> {
    if k == 0 {
        return Vec::new();
    }
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_by(rank_order);
    scored
}

pub fn top_k_seq<'a, I>(query: &Embedding, records: I, k: usize) -> Result<Vec<Scored>, DimensionMismatch>
where
    I: IntoIterator<Item = (&'a str, &'a Embedding)>,
{
    let scored = records
        .into_iter()
        .map(|(id, e)| {
            Ok(Scored { record_id: id.to_string(), similarity: cosine(query, e)? })
        })
        .collect::<Result<Vec<_>, DimensionMismatch>>()?;
    Ok(select_top_k(scored, k))
}

#[cfg(feature = "parallel")]
pub fn top_k_par(
    query: &Embedding,
    records: &[(String, Embedding)],
    k: usize,
) -> Result<Vec<Scored>, DimensionMismatch> {
    let scored = records
        .par_iter()
        .map(|(id, e)| Ok(Scored { record_id: id.clone(), similarity: cosine(query, e)? }))
        .collect::<Result<Vec<_>, DimensionMismatch>>()?;
    Ok(select_top_k(scored, k))
}

/// Exact top-k by cosine, ties by record id.
pub fn top_k(
    query: &Embedding,
    records: &[(String, Embedding)],
    k: usize,
) -> Result<Vec<Scored>, DimensionMismatch> {
    #[cfg(feature = "parallel")]
    {
        top_k_par(query, records, k)
    }
    #[cfg(not(feature = "parallel"))]
    {
        top_k_seq(query, records.iter().map(|(id, e)| (id.as_str(), e)), k)
    }
}

type Pair = (String, String, f64);

fn pairs_from(tasks: &[(String, Embedding)], i: usize, tau: f64) -> Result<Vec<Pair>, DimensionMismatch> {
    let mut out = Vec::new();
    for j in i + 1..tasks.len() {
        let sim = cosine(&tasks[i].1, &tasks[j].1)?;
        if sim >= tau {
            let (a, b) = if tasks[i].0 <= tasks[j].0 { (i, j) } else { (j, i) };
            out.push((tasks[a].0.clone(), tasks[b].0.clone(), sim));
        }
    }
    Ok(out)
}

pub fn pairwise_overlap_seq(tasks: &[(String, Embedding)], tau: f64) -> Result<Vec<Pair>, DimensionMismatch> {
    let mut out = Vec::new();
    for i in 0..tasks.len() {
        out.extend(pairs_from(tasks, i, tau)?);
    }
    Ok(out)
}

#[cfg(feature = "parallel")]
pub fn pairwise_overlap_par(tasks: &[(String, Embedding)], tau: f64) -> Result<Vec<Pair>, DimensionMismatch> {
    let chunks = (0..tasks.len())
        .into_par_iter()
        .map(|i| pairs_from(tasks, i, tau))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Unsorted pairs with cosine `>= tau`; the smaller id comes first in each pair.
pub fn pairwise_overlap(tasks: &[(String, Embedding)], tau: f64) -> Result<Vec<Pair>, DimensionMismatch> {
    #[cfg(feature = "parallel")]
    {
        pairwise_overlap_par(tasks, tau)
    }
    #[cfg(not(feature = "parallel"))]
    {
        pairwise_overlap_seq(tasks, tau)
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map_seq<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_par<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Order-preserving map, parallel when the `parallel` feature is on.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_par(items, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_seq(items, f)
    }
}
