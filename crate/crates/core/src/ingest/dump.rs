//! CSV and JSON chain dumps.
//!
//! A dump directory holds `chain.csv` (one row per block) and `txs.csv` (one
//! row per transaction). Column names match the field names of [`Block`] and
//! [`Transaction`]; unknown columns are ignored and an empty cell means an
//! absent optional value. A missing `entry_height` is derived from
//! `first_seen_time` as the latest block stamped at or before it.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{compute_feerate, Block, ChainView, Height, Transaction};

pub const BLOCKS_FILE: &str = "chain.csv";
pub const TXS_FILE: &str = "txs.csv";

pub const BLOCK_HEADER: [&str; 8] = [
    "height",
    "timestamp",
    "interval",
    "size",
    "difficulty",
    "total_weight",
    "tx_count",
    "mean_feerate",
];

pub const TX_HEADER: [&str; 12] = [
    "txid",
    "version",
    "size",
    "weight",
    "inputs",
    "outputs",
    "fee",
    "first_seen_time",
    "entry_height",
    "leave_height",
    "confirm_height",
    "confirm_time",
];

/// One `txs.csv` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxRecord {
    pub txid: String,
    pub version: i32,
    pub size: u64,
    pub weight: u64,
    pub inputs: u32,
    pub outputs: u32,
    pub fee: u64,
    pub first_seen_time: i64,
    pub entry_height: Option<Height>,
    pub leave_height: Option<Height>,
    pub confirm_height: Option<Height>,
    pub confirm_time: Option<i64>,
}

impl From<&Transaction> for TxRecord {
    fn from(tx: &Transaction) -> Self {
        TxRecord {
            txid: tx.txid.clone(),
            version: tx.version,
            size: tx.size,
            weight: tx.weight,
            inputs: tx.inputs,
            outputs: tx.outputs,
            fee: tx.fee,
            first_seen_time: tx.first_seen_time,
            entry_height: Some(tx.entry_height),
            leave_height: tx.leave_height,
            confirm_height: tx.confirm_height,
            confirm_time: tx.confirm_time,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonDump {
    blocks: Vec<Block>,
    transactions: Vec<TxRecord>,
}

/// Loads a dump directory (`chain.csv` + `txs.csv`) or a single `.json` file.
pub fn load_chain(path: &Path) -> Result<ChainView> {
    if path.extension().is_some_and(|e| e == "json") {
        return load_chain_json(path);
    }
    let blocks_path = path.join(BLOCKS_FILE);
    let txs_path = path.join(TXS_FILE);
    let blocks = read_blocks(open(&blocks_path)?, BLOCKS_FILE)?;
    let records = read_tx_records(open(&txs_path)?, TXS_FILE)?;
    assemble(blocks, records)
}

pub fn load_chain_json(path: &Path) -> Result<ChainView> {
    let dump: JsonDump = serde_json::from_reader(open(path)?)?;
    assemble(dump.blocks, dump.transactions)
}

pub fn write_chain(dir: &Path, chain: &ChainView) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blocks_path = dir.join(BLOCKS_FILE);
    write_blocks(create(&blocks_path)?, chain.blocks()).map_err(|e| csv_write_error(&blocks_path, e))?;
    let txs_path = dir.join(TXS_FILE);
    write_transactions(create(&txs_path)?, chain.transactions()).map_err(|e| csv_write_error(&txs_path, e))?;
    Ok(())
}

pub fn write_chain_json(path: &Path, chain: &ChainView) -> Result<()> {
    let dump = JsonDump {
        blocks: chain.blocks().to_vec(),
        transactions: chain.transactions().map(TxRecord::from).collect(),
    };
    serde_json::to_writer(create(path)?, &dump)?;
    Ok(())
}

pub fn read_blocks<R: Read>(reader: R, file: &str) -> Result<Vec<Block>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(&mut rdr, &BLOCK_HEADER, file)?;
    rdr.deserialize()
        .map(|row| row.map_err(|e| parse_error(file, e)))
        .collect()
}

pub fn read_tx_records<R: Read>(reader: R, file: &str) -> Result<Vec<TxRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let required: Vec<&str> = TX_HEADER.iter().copied().filter(|h| *h != "entry_height").collect();
    check_header(&mut rdr, &required, file)?;
    rdr.deserialize()
        .map(|row| row.map_err(|e| parse_error(file, e)))
        .collect()
}

pub fn write_blocks<W: Write>(writer: W, blocks: &[Block]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if blocks.is_empty() {
        w.write_record(BLOCK_HEADER)?;
    }
    for b in blocks {
        w.serialize(b)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_transactions<'a, W: Write>(
    writer: W,
    txs: impl Iterator<Item = &'a Transaction>,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut any = false;
    for tx in txs {
        w.serialize(TxRecord::from(tx))?;
        any = true;
    }
    if !any {
        w.write_record(TX_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

fn assemble(blocks: Vec<Block>, records: Vec<TxRecord>) -> Result<ChainView> {
    let skeleton = ChainView::new(blocks, vec![])?;
    let mut txs = Vec::with_capacity(records.len());
    for rec in records {
        let entry_height = match rec.entry_height {
            Some(h) => h,
            None => skeleton.entry_height_for_time(rec.first_seen_time).ok_or_else(|| {
                Error::Validation(format!(
                    "tx {} first seen at {} before the first block",
                    rec.txid, rec.first_seen_time
                ))
            })?,
        };
        let feerate = if rec.weight == 0 {
            return Err(Error::Validation(format!("tx {}: weight must be positive", rec.txid)));
        } else {
            compute_feerate(rec.fee, rec.weight)?
        };
        let leave_height = rec.leave_height.or(rec.confirm_height);
        txs.push(Transaction {
            txid: rec.txid,
            version: rec.version,
            size: rec.size,
            weight: rec.weight,
            inputs: rec.inputs,
            outputs: rec.outputs,
            fee: rec.fee,
            feerate,
            entry_height,
            leave_height,
            confirm_height: rec.confirm_height,
            first_seen_time: rec.first_seen_time,
            confirm_time: rec.confirm_time,
        });
    }
    ChainView::new(skeleton.blocks().to_vec(), txs)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, required: &[&str], file: &str) -> Result<()> {
    let headers = rdr.headers().map_err(|e| parse_error(file, e))?;
    if headers.is_empty() {
        return Err(Error::Parse {
            file: file.into(),
            row: 1,
            message: "missing header row".into(),
        });
    }
    for col in required {
        if !headers.iter().any(|h| h == *col) {
            return Err(Error::Parse {
                file: file.into(),
                row: 1,
                message: format!("missing required column `{col}`"),
            });
        }
    }
    Ok(())
}

fn parse_error(file: &str, err: csv::Error) -> Error {
    let row = err.position().map(|p| p.line()).unwrap_or(0);
    let message = match err.kind() {
        csv::ErrorKind::Deserialize { err, .. } => match err.field() {
            Some(idx) => format!("field {}: {}", idx + 1, err.kind()),
            None => err.kind().to_string(),
        },
        _ => err.to_string(),
    };
    Error::Parse {
        file: file.into(),
        row,
        message,
    }
}

fn csv_write_error(path: &Path, err: csv::Error) -> Error {
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::InvalidInput(format!("cannot write {}: {other:?}", path.display())),
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BLOCKS: &str = "height,timestamp,interval,size,difficulty,total_weight,tx_count,mean_feerate
100,1000,600,1200,1.5,4800,2,7.5
101,1600,600,600,1.5,2400,1,4.0
";

    const TXS: &str = "txid,version,size,weight,inputs,outputs,fee,first_seen_time,entry_height,leave_height,confirm_height,confirm_time,extra
a,2,300,1200,1,2,3000,1100,,,101,1600,ignored
b,2,400,1600,2,2,2000,1050,100,,101,1600,
c,1,200,800,1,1,400,1650,,,,,
";

    fn fixture() -> ChainView {
        let blocks = read_blocks(BLOCKS.as_bytes(), BLOCKS_FILE).unwrap();
        let recs = read_tx_records(TXS.as_bytes(), TXS_FILE).unwrap();
        assemble(blocks, recs).unwrap()
    }

    #[test]
    fn loads_two_block_fixture() {
        let chain = fixture();
        assert_eq!(chain.blocks().len(), 2);
        assert_eq!(chain.tx_count(), 3);
        assert_eq!(chain.tip_height(), Some(101));
        let a = chain.transaction("a").unwrap();
        assert_eq!(a.entry_height, 100);
        assert_eq!(a.leave_height, Some(101));
        assert_eq!(a.feerate, 10.0);
        assert_eq!(chain.transaction("c").unwrap().entry_height, 101);
        assert_eq!(chain.transaction("c").unwrap().confirm_height, None);
    }

    #[test]
    fn empty_files_with_headers() {
        let blocks = read_blocks(BLOCK_HEADER.join(",").as_bytes(), BLOCKS_FILE).unwrap();
        let recs = read_tx_records(TX_HEADER.join(",").as_bytes(), TXS_FILE).unwrap();
        let chain = assemble(blocks, recs).unwrap();
        assert!(chain.is_empty());
        assert_eq!(chain.tip_height(), None);
    }

    #[test]
    fn zero_weight_is_validation_error() {
        let txs = "txid,version,size,weight,inputs,outputs,fee,first_seen_time,entry_height,leave_height,confirm_height,confirm_time
z,2,300,0,1,2,3000,1100,100,,,
";
        let blocks = read_blocks(BLOCKS.as_bytes(), BLOCKS_FILE).unwrap();
        let recs = read_tx_records(txs.as_bytes(), TXS_FILE).unwrap();
        assert!(matches!(assemble(blocks, recs), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_field_names_row() {
        let txs = "txid,version,size,weight,inputs,outputs,fee,first_seen_time,entry_height,leave_height,confirm_height,confirm_time
a,2,300,1200,1,2,3000,1100,100,,,
b,2,300,heavy,1,2,3000,1100,100,,,
";
        match read_tx_records(txs.as_bytes(), TXS_FILE) {
            Err(Error::Parse { row, message, .. }) => {
                assert_eq!(row, 3);
                assert!(message.contains("field 4"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_parse_error() {
        let txs = "txid,version,size\na,2,300\n";
        assert!(matches!(read_tx_records(txs.as_bytes(), TXS_FILE), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn confirm_in_unknown_block_rejected() {
        let txs = "txid,version,size,weight,inputs,outputs,fee,first_seen_time,entry_height,leave_height,confirm_height,confirm_time
a,2,300,1200,1,2,3000,1100,100,,105,9999
";
        let blocks = read_blocks(BLOCKS.as_bytes(), BLOCKS_FILE).unwrap();
        let recs = read_tx_records(txs.as_bytes(), TXS_FILE).unwrap();
        assert!(matches!(assemble(blocks, recs), Err(Error::Validation(_))));
    }

    #[test]
    fn csv_and_json_round_trip() {
        let chain = fixture();
        let dir = tempfile::tempdir().unwrap();
        write_chain(dir.path(), &chain).unwrap();
        assert_eq!(load_chain(dir.path()).unwrap(), chain);
        let json = dir.path().join("chain.json");
        write_chain_json(&json, &chain).unwrap();
        assert_eq!(load_chain(&json).unwrap(), chain);
    }
}
