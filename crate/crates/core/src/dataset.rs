//! CSV input and output for auction datasets and envelope summaries.
//!
//! Triples files have columns `auction_id,n,r,x,y,z`; censored files are in
//! long format `auction_id,n,N,R,bid_rank,bid` with one row per observed bid,
//! ranks counted from the lowest bid. An auction without active bidders is a
//! single row with `bid_rank = 0` and an empty `bid`. Either format may carry
//! an extra `appraisal` column used for homogenization.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::order_stats::{CensoredAuctionObs, TripleObs};

/// Ingestion options. Homogenization divides every bid (and the reserve) by
/// the auction's appraisal value; rescaling then divides by the largest bid
/// in the file so that all bids lie in `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPrep {
    pub homogenize: bool,
    pub rescale: bool,
}

/// A dataset after preparation, with the factor that maps model units back
/// to homogenized units (`1` when no rescaling took place).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prepared<T> {
    pub data: Vec<T>,
    pub scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TripleRow {
    auction_id: u64,
    n: u32,
    r: u32,
    x: f64,
    y: f64,
    z: f64,
    #[serde(default, skip_serializing)]
    appraisal: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CensoredRow {
    auction_id: u64,
    n: u32,
    #[serde(rename = "N")]
    potential: u32,
    #[serde(rename = "R")]
    reserve: f64,
    bid_rank: u32,
    bid: Option<f64>,
    #[serde(default, skip_serializing)]
    appraisal: Option<f64>,
}

fn appraisal_factor(id: u64, appraisal: Option<f64>, prep: DataPrep) -> Result<f64> {
    if !prep.homogenize {
        return Ok(1.0);
    }
    match appraisal {
        Some(a) if a > 0.0 && a.is_finite() => Ok(a),
        Some(a) => Err(Error::Domain(format!("auction {id}: appraisal value {a} must be positive"))),
        None => Err(Error::Config(format!("auction {id}: homogenization requested but no appraisal value"))),
    }
}

fn rescale_factor(max: f64, prep: DataPrep) -> Result<f64> {
    if !prep.rescale {
        return Ok(1.0);
    }
    if !(max > 0.0 && max.is_finite()) {
        return Err(Error::Domain(format!("cannot rescale by a maximum bid of {max}")));
    }
    Ok(max)
}

pub fn write_triples<W: Write>(writer: W, data: &[TripleObs]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (i, o) in data.iter().enumerate() {
        w.serialize(TripleRow { auction_id: i as u64, n: o.n, r: o.r, x: o.x, y: o.y, z: o.z, appraisal: None })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_triples<R: Read>(reader: R, prep: DataPrep) -> Result<Prepared<TripleObs>> {
    let mut rows = Vec::new();
    for row in csv::Reader::from_reader(reader).deserialize::<TripleRow>() {
        let row = row?;
        let a = appraisal_factor(row.auction_id, row.appraisal, prep)?;
        rows.push(TripleObs { x: row.x / a, y: row.y / a, z: row.z / a, r: row.r, n: row.n });
    }
    let max = rows.iter().fold(0.0f64, |m, o| m.max(o.z));
    let scale = rescale_factor(max, prep)?;
    for o in &mut rows {
        o.x /= scale;
        o.y /= scale;
        o.z /= scale;
        o.validate()?;
    }
    Ok(Prepared { data: rows, scale })
}

pub fn save_triples(path: &Path, data: &[TripleObs]) -> Result<()> {
    write_triples(std::fs::File::create(path)?, data)
}

pub fn load_triples(path: &Path, prep: DataPrep) -> Result<Prepared<TripleObs>> {
    read_triples(std::fs::File::open(path)?, prep)
}

pub fn write_censored<W: Write>(writer: W, data: &[CensoredAuctionObs]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for a in data {
        let base = CensoredRow {
            auction_id: a.id,
            n: a.n,
            potential: a.potential,
            reserve: a.reserve,
            bid_rank: 0,
            bid: None,
            appraisal: None,
        };
        if a.bids.is_empty() {
            w.serialize(&base)?;
        }
        for (k, &b) in a.bids.iter().enumerate() {
            w.serialize(CensoredRow { bid_rank: k as u32 + 1, bid: Some(b), ..base.clone() })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_censored<R: Read>(reader: R, prep: DataPrep) -> Result<Prepared<CensoredAuctionObs>> {
    let mut order: Vec<u64> = Vec::new();
    let mut groups: HashMap<u64, Vec<CensoredRow>> = HashMap::new();
    for row in csv::Reader::from_reader(reader).deserialize::<CensoredRow>() {
        let row = row?;
        let entry = groups.entry(row.auction_id).or_insert_with(|| {
            order.push(row.auction_id);
            Vec::new()
        });
        entry.push(row);
    }

    let mut data = Vec::with_capacity(order.len());
    for id in order {
        let mut rows = groups.remove(&id).expect("grouped above");
        let first = rows[0].clone();
        if rows.iter().any(|r| {
            r.n != first.n
                || r.potential != first.potential
                || r.reserve != first.reserve
                || r.appraisal != first.appraisal
        }) {
            return Err(Error::Domain(format!("auction {id}: n, N, R or appraisal differ between rows")));
        }
        rows.sort_by_key(|r| r.bid_rank);
        let bids: Vec<f64> = if first.n == 0 {
            if rows.len() != 1 || rows[0].bid_rank != 0 || rows[0].bid.is_some() {
                return Err(Error::Domain(format!(
                    "auction {id}: no active bidders must be one row with bid_rank 0 and no bid"
                )));
            }
            Vec::new()
        } else {
            if rows.iter().enumerate().any(|(k, r)| r.bid_rank != k as u32 + 1) {
                return Err(Error::Domain(format!("auction {id}: bid ranks must run 1, 2, ... without gaps")));
            }
            rows.iter()
                .map(|r| {
                    r.bid.ok_or_else(|| Error::Domain(format!("auction {id}: missing bid at rank {}", r.bid_rank)))
                })
                .collect::<Result<_>>()?
        };
        let a = appraisal_factor(id, first.appraisal, prep)?;
        data.push(CensoredAuctionObs {
            id,
            bids: bids.iter().map(|b| b / a).collect(),
            n: first.n,
            potential: first.potential,
            reserve: first.reserve / a,
        });
    }

    let max = data.iter().flat_map(|a| a.bids.iter().copied().chain([a.reserve])).fold(0.0f64, f64::max);
    let scale = rescale_factor(max, prep)?;
    for a in &mut data {
        a.reserve /= scale;
        for b in &mut a.bids {
            *b /= scale;
        }
        a.validate()?;
    }
    Ok(Prepared { data, scale })
}

pub fn save_censored(path: &Path, data: &[CensoredAuctionObs]) -> Result<()> {
    write_censored(std::fs::File::create(path)?, data)
}

pub fn load_censored(path: &Path, prep: DataPrep) -> Result<Prepared<CensoredAuctionObs>> {
    read_censored(std::fs::File::open(path)?, prep)
}

/// Pointwise 5% / mean / 95% band over replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRow {
    pub grid: f64,
    pub q05: f64,
    pub mean: f64,
    pub q95: f64,
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        len => {
            let h = p.clamp(0.0, 1.0) * (len - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// `curves[rep][g]` evaluated on `grid[g]`.
pub fn envelope(grid: &[f64], curves: &[Vec<f64>]) -> Result<Vec<EnvelopeRow>> {
    if curves.is_empty() || curves.iter().any(|c| c.len() != grid.len()) {
        return Err(Error::Parameter("every replication must supply one value per grid point".into()));
    }
    Ok(grid
        .iter()
        .enumerate()
        .map(|(g, &x)| {
            let mut col: Vec<f64> = curves.iter().map(|c| c[g]).collect();
            col.sort_by(f64::total_cmp);
            EnvelopeRow {
                grid: x,
                q05: quantile(&col, 0.05),
                mean: col.iter().sum::<f64>() / col.len() as f64,
                q95: quantile(&col, 0.95),
            }
        })
        .collect())
}

pub fn write_envelope<W: Write>(writer: W, rows: &[EnvelopeRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::SyntheticDgp;
    use crate::order_stats::{sample_censored_dataset, sample_triples};

    #[test]
    fn triples_round_trip() {
        let data = sample_triples(&SyntheticDgp::default(), 50, 4, 3, 9).unwrap();
        let mut buf = Vec::new();
        write_triples(&mut buf, &data).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("auction_id,n,r,x,y,z\n"));
        let back = read_triples(buf.as_slice(), DataPrep::default()).unwrap();
        assert_eq!(back.data, data);
        assert_eq!(back.scale, 1.0);
    }

    #[test]
    fn censored_round_trip_with_empty_auctions() {
        let potential: Vec<u32> = (0..60).map(|i| 1 + i % 6).collect();
        let data = sample_censored_dataset(&SyntheticDgp::default(), &potential, 0.7, 4).unwrap();
        assert!(data.iter().any(|a| a.n == 0));
        assert!(data.iter().any(|a| a.n == 1));
        let mut buf = Vec::new();
        write_censored(&mut buf, &data).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("auction_id,n,N,R,bid_rank,bid\n"));
        let back = read_censored(buf.as_slice(), DataPrep::default()).unwrap();
        assert_eq!(back.data, data);
    }

    #[test]
    fn homogenize_then_rescale() {
        let csv = "auction_id,n,r,x,y,z,appraisal\n0,3,3,1,2,4,2\n1,3,3,3,6,8,4\n";
        let prep = DataPrep { homogenize: true, rescale: true };
        let out = read_triples(csv.as_bytes(), prep).unwrap();
        assert_eq!(out.scale, 2.0);
        assert_eq!((out.data[0].x, out.data[0].y, out.data[0].z), (0.25, 0.5, 1.0));
        assert_eq!((out.data[1].x, out.data[1].y, out.data[1].z), (0.375, 0.75, 1.0));
        assert!(matches!(
            read_triples(csv.as_bytes(), DataPrep { homogenize: false, rescale: false }),
            Err(Error::Domain(_))
        ));
        let bare = "auction_id,n,r,x,y,z\n0,3,3,1,2,4\n";
        assert!(matches!(read_triples(bare.as_bytes(), prep), Err(Error::Config(_))));
    }

    #[test]
    fn censored_reserve_is_rescaled_with_bids() {
        let csv = "auction_id,n,N,R,bid_rank,bid,appraisal\n\
                   7,3,5,70,2,90,100\n7,3,5,70,1,80,100\n8,0,4,35,0,,50\n";
        let out = read_censored(csv.as_bytes(), DataPrep { homogenize: true, rescale: true }).unwrap();
        assert_eq!(out.scale, 0.9);
        assert_eq!(out.data[0].bids.len(), 2);
        assert!((out.data[0].reserve - 0.7 / 0.9).abs() < 1e-15);
        assert!((out.data[0].bids[1] - 1.0).abs() < 1e-15);
        assert_eq!(out.data[1].n, 0);
        assert!((out.data[1].reserve - 0.7 / 0.9).abs() < 1e-15);
    }

    #[test]
    fn malformed_censored_rows_are_rejected() {
        let gap = "auction_id,n,N,R,bid_rank,bid\n1,3,4,0.5,1,0.6\n1,3,4,0.5,3,0.7\n";
        assert!(read_censored(gap.as_bytes(), DataPrep::default()).is_err());
        let mixed = "auction_id,n,N,R,bid_rank,bid\n1,3,4,0.5,1,0.6\n1,3,5,0.5,2,0.7\n";
        assert!(read_censored(mixed.as_bytes(), DataPrep::default()).is_err());
        let empty_bid = "auction_id,n,N,R,bid_rank,bid\n1,2,4,0.5,1,\n";
        assert!(read_censored(empty_bid.as_bytes(), DataPrep::default()).is_err());
    }

    #[test]
    fn envelope_quantiles() {
        let curves: Vec<Vec<f64>> = (0..=100).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let rows = envelope(&[0.0, 1.0], &curves).unwrap();
        assert_eq!(rows[0].q05, 5.0);
        assert_eq!(rows[0].q95, 95.0);
        assert_eq!(rows[1].mean, 100.0);
        let mut buf = Vec::new();
        write_envelope(&mut buf, &rows).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("grid,q05,mean,q95\n"));
        assert!(envelope(&[0.0], &[vec![1.0, 2.0]]).is_err());
    }
}
