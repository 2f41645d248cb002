//! CHSET v1 channel-set files.
//!
//! Header: `CHSET 1 <N> <N_R> <count> <frequency_hz>`. Then one record per
//! realization: N lines of N_R `re,im` entries separated by spaces, records
//! separated by blank lines. Uplink/downlink pair sets store two consecutive
//! records per pair, each preceded by a `UL` or `DL` tag line; their header
//! carries both carriers as `<f_up>,<f_down>` and counts records (two per
//! pair).

use std::fs;
use std::path::Path;

use crate::dictionary::{fmt_f64, matrix_to_text, parse_matrix_rows};
use crate::error::{Error, Result};
use crate::numerics::CMat;

use super::{ChannelRealization, UplinkDownlinkPair};

/// Ground-truth channel matrices loaded from a CHSET file.
#[derive(Clone, Debug)]
pub struct ChannelSet {
    pub realizations: Vec<CMat>,
    pub frequency_hz: f64,
}

/// Uplink/downlink ground-truth pairs loaded from a tagged CHSET file.
#[derive(Clone, Debug)]
pub struct PairSet {
    pub pairs: Vec<(CMat, CMat)>,
    pub uplink_hz: f64,
    pub downlink_hz: f64,
}

fn header_line(n: usize, n_r: usize, count: usize, freq_token: &str) -> String {
    format!("CHSET 1 {n} {n_r} {count} {freq_token}\n")
}

pub fn save_channel_set(
    realizations: &[ChannelRealization],
    path: impl AsRef<Path>,
) -> Result<()> {
    let first = realizations
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot save an empty channel set".into()))?;
    let (n, n_r) = first.matrix.shape();
    let freq = first.carrier_hz;
    for r in realizations {
        if r.matrix.shape() != (n, n_r) || r.carrier_hz != freq {
            return Err(Error::InvalidArgument(
                "all realizations in a set must share shape and carrier".into(),
            ));
        }
    }
    let mut out = header_line(n, n_r, realizations.len(), &fmt_f64(freq));
    for r in realizations {
        out.push_str(&matrix_to_text(&r.matrix));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn save_pair_set(pairs: &[UplinkDownlinkPair], path: impl AsRef<Path>) -> Result<()> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot save an empty pair set".into()))?;
    let (n, n_r) = first.uplink.matrix.shape();
    let (f_up, f_down) = (first.uplink.carrier_hz, first.downlink.carrier_hz);
    for p in pairs {
        if p.uplink.matrix.shape() != (n, n_r)
            || p.downlink.matrix.shape() != (n, n_r)
            || p.uplink.carrier_hz != f_up
            || p.downlink.carrier_hz != f_down
        {
            return Err(Error::InvalidArgument(
                "all pairs in a set must share shape and carriers".into(),
            ));
        }
    }
    let freq_token = format!("{},{}", fmt_f64(f_up), fmt_f64(f_down));
    let mut out = header_line(n, n_r, 2 * pairs.len(), &freq_token);
    for p in pairs {
        out.push_str("UL\n");
        out.push_str(&matrix_to_text(&p.uplink.matrix));
        out.push('\n');
        out.push_str("DL\n");
        out.push_str(&matrix_to_text(&p.downlink.matrix));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

struct Header {
    n: usize,
    n_r: usize,
    count: usize,
    freq_token: String,
}

fn parse_header(line: &str) -> Result<Header> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 6 || fields[0] != "CHSET" || fields[1] != "1" {
        return Err(Error::format("CHSET", format!("bad header `{line}`")));
    }
    let parse = |s: &str, what: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::format("CHSET", format!("bad {what} `{s}`")))
    };
    Ok(Header {
        n: parse(fields[2], "antenna count")?,
        n_r: parse(fields[3], "UE antenna count")?,
        count: parse(fields[4], "record count")?,
        freq_token: fields[5].to_string(),
    })
}

fn parse_freq(token: &str) -> Result<f64> {
    token
        .parse()
        .map_err(|_| Error::format("CHSET", format!("bad frequency `{token}`")))
}

pub fn load_channel_set(path: impl AsRef<Path>) -> Result<ChannelSet> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = parse_header(
        lines
            .next()
            .ok_or_else(|| Error::format("CHSET", "empty file"))?,
    )?;
    let frequency_hz = parse_freq(&header.freq_token)?;
    let mut realizations = Vec::with_capacity(header.count);
    for _ in 0..header.count {
        realizations.push(parse_matrix_rows(&mut lines, header.n, header.n_r, "CHSET")?);
    }
    if lines.next().is_some() {
        return Err(Error::format("CHSET", "trailing data after last record"));
    }
    Ok(ChannelSet {
        realizations,
        frequency_hz,
    })
}

pub fn load_pair_set(path: impl AsRef<Path>) -> Result<PairSet> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = parse_header(
        lines
            .next()
            .ok_or_else(|| Error::format("CHSET", "empty file"))?,
    )?;
    let (up_token, down_token) = header
        .freq_token
        .split_once(',')
        .ok_or_else(|| Error::format("CHSET", "pair set header needs `f_up,f_down`"))?;
    let uplink_hz = parse_freq(up_token)?;
    let downlink_hz = parse_freq(down_token)?;
    if header.count % 2 != 0 {
        return Err(Error::format("CHSET", "pair set must hold an even record count"));
    }
    let mut pairs = Vec::with_capacity(header.count / 2);
    for _ in 0..header.count / 2 {
        for (tag, _) in [("UL", 0), ("DL", 1)] {
            let tag_line = lines
                .next()
                .ok_or_else(|| Error::format("CHSET", "missing record tag"))?;
            if tag_line.trim() != tag {
                return Err(Error::format(
                    "CHSET",
                    format!("expected `{tag}` tag, found `{tag_line}`"),
                ));
            }
            let m = parse_matrix_rows(&mut lines, header.n, header.n_r, "CHSET")?;
            if tag == "UL" {
                pairs.push((m, CMat::zeros(0, 0)));
            } else {
                pairs.last_mut().unwrap().1 = m;
            }
        }
    }
    if lines.next().is_some() {
        return Err(Error::format("CHSET", "trailing data after last record"));
    }
    Ok(PairSet {
        pairs,
        uplink_hz,
        downlink_hz,
    })
}
