//! Text dumps of both ledgers and the replay check behind `bfica verify`.
//!
//! Operational dump:
//!
//! ```text
//! bfica-op-ledger v1
//! b_max 7
//! genesis OP <ca key hex>
//! block <seq> <block_id> <prev_bid> <t_alt_bid> <t_id,t_id,...|->
//! tx <canonical transaction hex>
//! dblock <seq> <block_id> <prev_bid> <t_alt_bid> <t_ids|->
//! tx ...
//! ```
//!
//! Decision dump replaces `t_alt_bid` (there is none) and adds the block
//! content mode; the running pool follows as a `pool` record.
//!
//! ```text
//! bfica-dp-ledger v1
//! b_max 7
//! content full_data
//! genesis DP <ca key hex>
//! block <seq> <block_id> <prev_bid> <t_ids|->
//! tx ...
//! pool <t_ids|->
//! tx ...
//! ```

use std::fmt::Write as _;

use thiserror::Error;

use crate::crypto::{Digest, PublicKey};
use crate::dp::{dp_block_id, BlockContent, DpLedger};
use crate::identity::{GenesisCredential, Partition};
use crate::op::{check_block, ChainError, ChainFault, DynamicBlockHeader, OpLedger};
use crate::tx::Transaction;

pub const OP_MAGIC: &str = "bfica-op-ledger v1";
pub const DP_MAGIC: &str = "bfica-dp-ledger v1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DumpError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Chain(#[from] ChainError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpSummary {
    pub partition: Partition,
    pub sealed_blocks: usize,
    pub transactions: usize,
    pub tip: Digest,
}

fn id_list(ids: impl Iterator<Item = Digest>) -> String {
    let v: Vec<String> = ids.map(|d| d.to_hex()).collect();
    if v.is_empty() {
        "-".into()
    } else {
        v.join(",")
    }
}

fn push_txs(out: &mut String, txs: &[Transaction]) {
    for tx in txs {
        writeln!(out, "tx {}", hex::encode(tx.to_bytes())).expect("string write");
    }
}

pub fn dump_op(ledger: &OpLedger) -> String {
    let mut out = String::new();
    writeln!(out, "{OP_MAGIC}").unwrap();
    writeln!(out, "b_max {}", ledger.b_max()).unwrap();
    writeln!(out, "genesis OP {}", ledger.genesis().ca_verification_key.to_hex()).unwrap();
    let mut record = |tag: &str, h: &DynamicBlockHeader, txs: &[Transaction]| {
        writeln!(
            out,
            "{tag} {} {} {} {} {}",
            h.seq_num,
            h.block_id,
            h.prev_bid,
            h.t_alt_bid,
            id_list(txs.iter().map(|t| t.t_id))
        )
        .unwrap();
        push_txs(&mut out, txs);
    };
    for b in ledger.sealed() {
        record("block", &b.header, &b.txs);
    }
    record("dblock", ledger.dblock().header(), ledger.dblock().txs());
    out
}

pub fn dump_dp(ledger: &DpLedger) -> String {
    let mut out = String::new();
    writeln!(out, "{DP_MAGIC}").unwrap();
    writeln!(out, "b_max {}", ledger.b_max()).unwrap();
    let content = match ledger.content() {
        BlockContent::FullData => "full_data",
        BlockContent::HashOnly => "hash_only",
    };
    writeln!(out, "content {content}").unwrap();
    writeln!(out, "genesis DP {}", ledger.genesis().ca_verification_key.to_hex()).unwrap();
    for b in ledger.sealed() {
        let h = &b.header;
        writeln!(
            out,
            "block {} {} {} {}",
            h.seq_num,
            h.block_id,
            h.prev_bid,
            id_list(b.txs.iter().map(|t| t.t_id))
        )
        .unwrap();
        push_txs(&mut out, &b.txs);
    }
    writeln!(out, "pool {}", id_list(ledger.pool().iter().map(|t| t.t_id))).unwrap();
    push_txs(&mut out, ledger.pool());
    out
}

struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate().peekable(),
        }
    }

    fn next(&mut self) -> Option<(usize, Vec<&'a str>)> {
        loop {
            let (i, l) = self.inner.next()?;
            let l = l.trim();
            if !l.is_empty() && !l.starts_with('#') {
                return Some((i + 1, l.split_whitespace().collect()));
            }
        }
    }

    fn peek_is_tx(&mut self) -> bool {
        while let Some((_, l)) = self.inner.peek() {
            let l = l.trim();
            if l.is_empty() || l.starts_with('#') {
                self.inner.next();
                continue;
            }
            return l.starts_with("tx ");
        }
        false
    }

    fn expect(&mut self, key: &str, arity: usize) -> Result<(usize, Vec<&'a str>), DumpError> {
        match self.next() {
            Some((line, f)) if f.first() == Some(&key) && f.len() == arity + 1 => Ok((line, f)),
            Some((line, _)) => Err(DumpError::Parse {
                line,
                msg: format!("expected `{key}` with {arity} fields"),
            }),
            None => Err(DumpError::Parse {
                line: 0,
                msg: format!("missing `{key}` record"),
            }),
        }
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> DumpError {
    DumpError::Parse { line, msg: msg.into() }
}

fn digest(line: usize, s: &str) -> Result<Digest, DumpError> {
    Digest::from_hex(s).map_err(|e| parse_err(line, e.to_string()))
}

fn ids(line: usize, s: &str) -> Result<Vec<Digest>, DumpError> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| digest(line, p)).collect()
}

/// Reads the `tx` lines following a block record. Undecodable lines are a
/// chain fault at `height`.
fn read_txs(lines: &mut Lines<'_>, height: u64) -> Result<Vec<Transaction>, DumpError> {
    let mut txs = Vec::new();
    while lines.peek_is_tx() {
        let (line, f) = lines.next().expect("peeked");
        let tx = f
            .get(1)
            .and_then(|h| hex::decode(h).ok())
            .ok_or_else(|| parse_err(line, "bad transaction hex"))
            .and_then(|b| {
                Transaction::from_bytes(&b).map_err(|e| {
                    DumpError::Chain(ChainError {
                        height,
                        fault: ChainFault::Malformed(format!("line {line}: {e}")),
                    })
                })
            })?;
        txs.push(tx);
    }
    Ok(txs)
}

fn header(lines: &mut Lines<'_>, magic: &str) -> Result<usize, DumpError> {
    match lines.next() {
        Some((_, f)) if f.join(" ") == magic => {}
        Some((line, _)) => return Err(parse_err(line, format!("expected `{magic}`"))),
        None => return Err(parse_err(0, "empty dump")),
    }
    let (line, f) = lines.expect("b_max", 1)?;
    let b_max: usize = f[1].parse().map_err(|_| parse_err(line, "bad b_max"))?;
    if b_max == 0 {
        return Err(parse_err(line, "b_max must be positive"));
    }
    Ok(b_max)
}

fn genesis(lines: &mut Lines<'_>, partition: Partition) -> Result<GenesisCredential, DumpError> {
    let (line, f) = lines.expect("genesis", 2)?;
    if f[1] != partition.to_string() {
        return Err(parse_err(line, "genesis partition mismatch"));
    }
    let key = PublicKey::from_hex(f[2]).map_err(|e| parse_err(line, e.to_string()))?;
    Ok(GenesisCredential {
        partition,
        ca_verification_key: key,
    })
}

fn chain(height: u64, fault: ChainFault) -> DumpError {
    DumpError::Chain(ChainError { height, fault })
}

/// Replays an operational dump from genesis, checking every fold, link,
/// size and transaction. Rebuilds the ledger on success.
pub fn verify_op_dump(text: &str) -> Result<OpLedger, DumpError> {
    let mut lines = Lines::new(text);
    let b_max = header(&mut lines, OP_MAGIC)?;
    let genesis = genesis(&mut lines, Partition::Op)?;
    let mut prev = genesis.genesis_block_id();
    let mut sealed = Vec::new();
    let mut height = 0u64;
    loop {
        let Some((line, f)) = lines.next() else {
            return Err(parse_err(0, "missing `dblock` record"));
        };
        let tag = f[0];
        if (tag != "block" && tag != "dblock") || f.len() != 6 {
            return Err(parse_err(line, "expected `block` or `dblock` record"));
        }
        let seq_num: u64 = f[1].parse().map_err(|_| parse_err(line, "bad seq_num"))?;
        let header = DynamicBlockHeader {
            seq_num,
            block_id: digest(line, f[2])?,
            prev_bid: digest(line, f[3])?,
            t_alt_bid: digest(line, f[4])?,
        };
        let listed = ids(line, f[5])?;
        let txs = read_txs(&mut lines, height)?;
        if listed != txs.iter().map(|t| t.t_id).collect::<Vec<_>>() {
            return Err(chain(height, ChainFault::TxList));
        }
        check_block(&header, &txs, height, &prev).map_err(|fault| chain(height, fault))?;
        if tag == "dblock" {
            if txs.len() > b_max {
                return Err(chain(height, ChainFault::Size { expected: b_max, got: txs.len() }));
            }
            if let Some((line, _)) = lines.next() {
                return Err(parse_err(line, "records after `dblock`"));
            }
            return Ok(OpLedger::from_parts(genesis, b_max, sealed, txs));
        }
        if txs.len() != b_max {
            return Err(chain(height, ChainFault::Size { expected: b_max, got: txs.len() }));
        }
        prev = header.block_id;
        sealed.push(crate::op::SealedBlock { header, txs });
        height += 1;
    }
}

/// Replays a decision dump from genesis.
pub fn verify_dp_dump(text: &str) -> Result<DpLedger, DumpError> {
    let mut lines = Lines::new(text);
    let b_max = header(&mut lines, DP_MAGIC)?;
    let (line, f) = lines.expect("content", 1)?;
    let content = match f[1] {
        "full_data" => BlockContent::FullData,
        "hash_only" => BlockContent::HashOnly,
        _ => return Err(parse_err(line, "unknown content mode")),
    };
    let genesis = genesis(&mut lines, Partition::Dp)?;
    let mut prev = genesis.genesis_block_id();
    let mut sealed = Vec::new();
    let mut height = 0u64;
    loop {
        let Some((line, f)) = lines.next() else {
            return Err(parse_err(0, "missing `pool` record"));
        };
        match (f[0], f.len()) {
            ("pool", 2) => {
                let listed = ids(line, f[1])?;
                let pool = read_txs(&mut lines, height)?;
                if listed != pool.iter().map(|t| t.t_id).collect::<Vec<_>>() {
                    return Err(chain(height, ChainFault::TxList));
                }
                for (index, tx) in pool.iter().enumerate() {
                    tx.verify_structure()
                        .map_err(|error| chain(height, ChainFault::Transaction { index, error }))?;
                }
                if let Some((line, _)) = lines.next() {
                    return Err(parse_err(line, "records after `pool`"));
                }
                return Ok(DpLedger::from_parts(genesis, b_max, content, sealed, pool));
            }
            ("block", 5) => {
                let seq_num: u64 = f[1].parse().map_err(|_| parse_err(line, "bad seq_num"))?;
                let header = crate::dp::DpBlockHeader {
                    seq_num,
                    block_id: digest(line, f[2])?,
                    prev_bid: digest(line, f[3])?,
                };
                let listed = ids(line, f[4])?;
                let txs = read_txs(&mut lines, height)?;
                if listed != txs.iter().map(|t| t.t_id).collect::<Vec<_>>() {
                    return Err(chain(height, ChainFault::TxList));
                }
                if seq_num != height {
                    return Err(chain(height, ChainFault::Sequence));
                }
                if header.prev_bid != prev {
                    return Err(chain(height, ChainFault::BrokenLink));
                }
                for (index, tx) in txs.iter().enumerate() {
                    tx.verify_structure()
                        .map_err(|error| chain(height, ChainFault::Transaction { index, error }))?;
                }
                if txs.len() != b_max {
                    return Err(chain(height, ChainFault::Size { expected: b_max, got: txs.len() }));
                }
                if dp_block_id(seq_num, &prev, &txs, content) != header.block_id {
                    return Err(chain(height, ChainFault::BlockId));
                }
                prev = header.block_id;
                sealed.push(crate::dp::DpBlock { header, txs });
                height += 1;
            }
            _ => return Err(parse_err(line, "expected `block` or `pool` record")),
        }
    }
}

/// Verifies either dump kind, chosen by its first line.
pub fn verify_dump(text: &str) -> Result<DumpSummary, DumpError> {
    let first = text.lines().map(str::trim).find(|l| !l.is_empty() && !l.starts_with('#'));
    match first {
        Some(OP_MAGIC) => {
            let l = verify_op_dump(text)?;
            Ok(DumpSummary {
                partition: Partition::Op,
                sealed_blocks: l.sealed().len(),
                transactions: l.tx_count(),
                tip: l.dblock().header().block_id,
            })
        }
        Some(DP_MAGIC) => {
            let l = verify_dp_dump(text)?;
            Ok(DumpSummary {
                partition: Partition::Dp,
                sealed_blocks: l.sealed().len(),
                transactions: l.transactions().count(),
                tip: l.tip_id(),
            })
        }
        _ => Err(parse_err(1, "unrecognised dump header")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use crate::tx::{make_ese, Location, SafetyEvent};

    fn ledger(n: u64) -> OpLedger {
        let genesis = GenesisCredential {
            partition: Partition::Op,
            ca_verification_key: KeyPair::from_seed([1; 32]).public(),
        };
        let mut l = OpLedger::new(genesis, 3);
        let kp = KeyPair::from_seed([2; 32]);
        for i in 0..n {
            if l.is_full() {
                l.seal().unwrap();
            }
            l.validate(make_ese(&kp, SafetyEvent::HardBrake, Location::from_degrees(0.0, 0.0), i))
                .unwrap();
        }
        l
    }

    #[test]
    fn op_roundtrip() {
        let l = ledger(8);
        let text = dump_op(&l);
        let back = verify_op_dump(&text).unwrap();
        assert_eq!(dump_op(&back), text);
        let s = verify_dump(&text).unwrap();
        assert_eq!((s.sealed_blocks, s.transactions), (2, 8));
    }

    #[test]
    fn flipped_t_id_digit_names_height() {
        let text = dump_op(&ledger(8));
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let idx = lines.iter().position(|l| l.starts_with("block 1 ")).unwrap();
        let last = lines[idx].pop().unwrap();
        lines[idx].push(if last == '0' { '1' } else { '0' });
        let err = verify_dump(&lines.join("\n")).unwrap_err();
        assert_eq!(err, DumpError::Chain(ChainError { height: 1, fault: ChainFault::TxList }));
    }

    #[test]
    fn empty_ledger_dump() {
        let text = dump_op(&ledger(0));
        assert_eq!(text.lines().count(), 4);
        verify_dump(&text).unwrap();
        assert!(verify_dump("nonsense").is_err());
    }
}
