//! SAS Transport (XPORT) version 5 files: 80-byte card images holding a
//! library header, one member header, NAMESTR variable descriptors and the
//! packed observation records.

use std::fs;
use std::path::Path;

use super::ibm::{ibm_to_ieee, ieee_to_ibm, is_sas_missing, IbmClamp, MISSING_DOT};
use super::{Cell, Column, ColumnKind, IngestError, RawTable};

const RECORD: usize = 80;
const LIBRARY_MAGIC: &[u8] = b"HEADER RECORD*******LIBRARY HEADER RECORD!!!!!!!";
const LIBV8_MAGIC: &[u8] = b"HEADER RECORD*******LIBV8   HEADER RECORD!!!!!!!";
const MEMBER_MAGIC: &[u8] = b"HEADER RECORD*******MEMBER  HEADER RECORD!!!!!!!";
const MEMBV8_MAGIC: &[u8] = b"HEADER RECORD*******MEMBV8  HEADER RECORD!!!!!!!";
const DSCRPTR_MAGIC: &[u8] = b"HEADER RECORD*******DSCRPTR HEADER RECORD!!!!!!!";
const NAMESTR_MAGIC: &[u8] = b"HEADER RECORD*******NAMESTR HEADER RECORD!!!!!!!";
const OBS_MAGIC: &[u8] = b"HEADER RECORD*******OBS     HEADER RECORD!!!!!!!";
const STAMP: &[u8; 16] = b"01JAN26:00:00:00";

#[derive(Debug, Clone)]
struct Namestr {
    numeric: bool,
    length: usize,
    name: String,
    label: String,
    position: usize,
}

/// Reads the first member of a SAS Transport v5 file.
pub fn read_xpt(path: impl AsRef<Path>) -> Result<RawTable, IngestError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_xpt(&bytes)
}

/// Parses transport bytes already in memory.
pub fn parse_xpt(bytes: &[u8]) -> Result<RawTable, IngestError> {
    let record = |i: usize| -> Result<&[u8], IngestError> {
        bytes
            .get(i * RECORD..(i + 1) * RECORD)
            .ok_or_else(|| IngestError::TruncatedRecord(format!("header record {i}")))
    };

    let first = bytes.get(..LIBRARY_MAGIC.len()).unwrap_or(bytes);
    if first == LIBV8_MAGIC {
        return Err(IngestError::UnsupportedVersion(
            "SAS transport v8/v9 (LIBV8) is not supported; export as v5".into(),
        ));
    }
    if first != LIBRARY_MAGIC {
        return Err(IngestError::BadMagic(
            "first record is not a LIBRARY HEADER RECORD".into(),
        ));
    }

    let member = record(3)?;
    if member.starts_with(MEMBV8_MAGIC) {
        return Err(IngestError::UnsupportedVersion("MEMBV8 member header".into()));
    }
    if !member.starts_with(MEMBER_MAGIC) {
        return Err(IngestError::BadMagic("missing MEMBER HEADER RECORD".into()));
    }
    let namestr_len = ascii_usize(&member[74..78]).unwrap_or(140);
    if namestr_len != 140 && namestr_len != 136 {
        return Err(IngestError::BadMagic(format!(
            "unexpected NAMESTR length {namestr_len}"
        )));
    }
    if !record(4)?.starts_with(DSCRPTR_MAGIC) {
        return Err(IngestError::BadMagic("missing DSCRPTR HEADER RECORD".into()));
    }
    let dataset = text(&record(5)?[8..16]);
    let namestr_header = record(7)?;
    if !namestr_header.starts_with(NAMESTR_MAGIC) {
        return Err(IngestError::BadMagic("missing NAMESTR HEADER RECORD".into()));
    }
    let nvars = ascii_usize(&namestr_header[54..58])
        .ok_or_else(|| IngestError::BadMagic("unreadable variable count".into()))?;

    let namestr_start = 8 * RECORD;
    let namestr_bytes = nvars * namestr_len;
    let namestr_end = namestr_start + namestr_bytes.div_ceil(RECORD) * RECORD;
    let block = bytes
        .get(namestr_start..namestr_start + namestr_bytes)
        .ok_or_else(|| IngestError::TruncatedRecord("NAMESTR block".into()))?;
    let vars: Vec<Namestr> = block
        .chunks_exact(namestr_len)
        .map(parse_namestr)
        .collect::<Result<_, _>>()?;

    let obs_header = bytes
        .get(namestr_end..namestr_end + RECORD)
        .ok_or_else(|| IngestError::TruncatedRecord("OBS header".into()))?;
    if !obs_header.starts_with(OBS_MAGIC) {
        return Err(IngestError::BadMagic("missing OBS HEADER RECORD".into()));
    }
    let data_start = namestr_end + RECORD;
    let mut data = &bytes[data_start..];
    // A second member, if any, starts on a record boundary.
    if let Some(next) = data
        .chunks(RECORD)
        .position(|chunk| chunk.starts_with(MEMBER_MAGIC))
    {
        data = &data[..next * RECORD];
    }

    let row_len = vars.iter().map(|v| v.position + v.length).max().unwrap_or(0);
    let mut rows = data.len().checked_div(row_len).unwrap_or(0);
    // Blank padding (< 80 bytes) after the last row can hold whole rows when
    // rows are short; such a row starts inside the final 79 bytes.
    while rows > 0 {
        let start = (rows - 1) * row_len;
        let row = &data[start..start + row_len];
        if start + RECORD > data.len() && row.iter().all(|&b| b == b' ') {
            rows -= 1;
        } else {
            break;
        }
    }

    let columns = vars
        .iter()
        .map(|var| {
            let values = (0..rows)
                .map(|r| {
                    let start = r * row_len + var.position;
                    decode_field(&data[start..start + var.length], var.numeric)
                })
                .collect();
            Column {
                name: var.name.clone(),
                kind: if var.numeric {
                    ColumnKind::Numeric
                } else {
                    ColumnKind::Text { width: var.length }
                },
                label: var.label.clone(),
                values,
            }
        })
        .collect();
    RawTable::with_row_count(dataset, columns, rows)
}

fn parse_namestr(raw: &[u8]) -> Result<Namestr, IngestError> {
    let ntype = i16::from_be_bytes([raw[0], raw[1]]);
    let length = i16::from_be_bytes([raw[4], raw[5]]);
    let position = i32::from_be_bytes([raw[84], raw[85], raw[86], raw[87]]);
    if length <= 0 || position < 0 {
        return Err(IngestError::BadMagic("corrupt NAMESTR entry".into()));
    }
    let numeric = ntype == 1;
    if numeric && !(2..=8).contains(&length) {
        return Err(IngestError::BadMagic(format!(
            "numeric field length {length} outside 2..=8"
        )));
    }
    Ok(Namestr {
        numeric,
        length: length as usize,
        name: text(&raw[8..16]),
        label: text(&raw[16..56]),
        position: position as usize,
    })
}

fn decode_field(raw: &[u8], numeric: bool) -> Cell {
    if numeric {
        if is_sas_missing(raw) {
            return Cell::Missing(Some(missing_code(raw[0])));
        }
        let mut full = [0u8; 8];
        full[..raw.len()].copy_from_slice(raw);
        Cell::Num(ibm_to_ieee(full))
    } else {
        let s = String::from_utf8_lossy(raw).trim_end().to_string();
        if s.is_empty() {
            Cell::Missing(None)
        } else {
            Cell::Missing(Some(s))
        }
    }
}

fn missing_code(tag: u8) -> String {
    match tag {
        0x2E => ".".to_string(),
        other => format!(".{}", other as char),
    }
}

fn text(raw: &[u8]) -> String {
    String::from_utf8_lossy(raw).trim_end().to_string()
}

fn ascii_usize(raw: &[u8]) -> Option<usize> {
    std::str::from_utf8(raw).ok()?.trim().parse().ok()
}

/// Counts of numerics that did not fit the IBM range on output.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct XptWriteReport {
    pub overflowed: usize,
    pub underflowed: usize,
}

/// Writes a table as a single-member SAS Transport v5 file. Numeric columns
/// use 8-byte IBM floats; missing numerics are written as `.`.
pub fn write_xpt(table: &RawTable, path: impl AsRef<Path>) -> Result<XptWriteReport, IngestError> {
    let (bytes, report) = encode_xpt(table)?;
    let path = path.as_ref();
    fs::write(path, bytes).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(report)
}

pub fn encode_xpt(table: &RawTable) -> Result<(Vec<u8>, XptWriteReport), IngestError> {
    for name in std::iter::once(table.name()).chain(table.column_names()) {
        if name.len() > 8 || !name.is_ascii() {
            return Err(IngestError::UnsupportedVersion(format!(
                "name '{name}' needs more than 8 ASCII bytes (v8 only)"
            )));
        }
    }
    let mut out = Vec::new();
    let card = |out: &mut Vec<u8>, content: &[u8]| {
        let mut rec = [b' '; RECORD];
        rec[..content.len()].copy_from_slice(content);
        out.extend_from_slice(&rec);
    };

    card(&mut out, &[LIBRARY_MAGIC, b"000000000000000000000000000000"].concat());
    let mut real = Vec::new();
    real.extend_from_slice(b"SAS     SAS     SASLIB  9.4     X64_10PR");
    real.extend_from_slice(&[b' '; 24]);
    real.extend_from_slice(STAMP);
    card(&mut out, &real);
    card(&mut out, STAMP);
    card(&mut out, &[MEMBER_MAGIC, b"000000000000000001600000000140"].concat());
    card(&mut out, &[DSCRPTR_MAGIC, b"000000000000000000000000000000"].concat());
    let mut member = Vec::new();
    member.extend_from_slice(b"SAS     ");
    member.extend_from_slice(&pad(table.name(), 8));
    member.extend_from_slice(b"SASDATA 9.4     X64_10PR");
    member.extend_from_slice(&[b' '; 24]);
    member.extend_from_slice(STAMP);
    card(&mut out, &member);
    let mut member2 = Vec::new();
    member2.extend_from_slice(STAMP);
    member2.extend_from_slice(&[b' '; 16]);
    member2.extend_from_slice(&pad("", 40));
    card(&mut out, &member2);
    card(
        &mut out,
        &[
            NAMESTR_MAGIC,
            format!("000000{:04}00000000000000000000", table.columns().len()).as_bytes(),
        ]
        .concat(),
    );

    let widths: Vec<usize> = table
        .columns()
        .iter()
        .map(|c| match c.kind {
            ColumnKind::Numeric => 8,
            ColumnKind::Text { width } => width.clamp(1, 200),
        })
        .collect();
    let mut namestrs = Vec::new();
    let mut position = 0usize;
    for (i, (column, &width)) in table.columns().iter().zip(&widths).enumerate() {
        let mut ns = vec![0u8; 140];
        let ntype: i16 = if column.kind == ColumnKind::Numeric { 1 } else { 2 };
        ns[0..2].copy_from_slice(&ntype.to_be_bytes());
        ns[4..6].copy_from_slice(&(width as i16).to_be_bytes());
        ns[6..8].copy_from_slice(&((i + 1) as i16).to_be_bytes());
        ns[8..16].copy_from_slice(&pad(&column.name, 8));
        let label: String = column.label.chars().take(40).collect();
        ns[16..56].copy_from_slice(&pad(&label, 40));
        ns[56..64].copy_from_slice(&pad("", 8));
        ns[72..80].copy_from_slice(&pad("", 8));
        ns[84..88].copy_from_slice(&(position as i32).to_be_bytes());
        namestrs.extend_from_slice(&ns);
        position += width;
    }
    pad_to_record(&mut namestrs);
    out.extend_from_slice(&namestrs);
    card(&mut out, &[OBS_MAGIC, b"000000000000000000000000000000"].concat());

    let mut report = XptWriteReport::default();
    let mut data = Vec::with_capacity(position * table.row_count());
    for row in 0..table.row_count() {
        for (column, &width) in table.columns().iter().zip(&widths) {
            match (column.kind, &column.values[row]) {
                (ColumnKind::Numeric, Cell::Num(v)) => {
                    let (bytes, clamp) = ieee_to_ibm(*v);
                    match clamp {
                        IbmClamp::Overflow => report.overflowed += 1,
                        IbmClamp::Underflow => report.underflowed += 1,
                        IbmClamp::None => {}
                    }
                    data.extend_from_slice(&bytes);
                }
                (ColumnKind::Numeric, Cell::Missing(code)) => {
                    data.extend_from_slice(&missing_bytes(code.as_deref()));
                }
                (ColumnKind::Text { .. }, cell) => {
                    let s = match cell {
                        Cell::Missing(Some(s)) => s.clone(),
                        Cell::Num(v) => super::format_number(*v),
                        Cell::Missing(None) => String::new(),
                    };
                    data.extend_from_slice(&pad_bytes(s.as_bytes(), width));
                }
            }
        }
    }
    pad_to_record(&mut data);
    out.extend_from_slice(&data);
    Ok((out, report))
}

fn missing_bytes(code: Option<&str>) -> [u8; 8] {
    match code.map(str::as_bytes) {
        Some([b'.', tag]) if tag.is_ascii_uppercase() || *tag == b'_' => {
            [*tag, 0, 0, 0, 0, 0, 0, 0]
        }
        _ => MISSING_DOT,
    }
}

fn pad(s: &str, width: usize) -> Vec<u8> {
    pad_bytes(s.as_bytes(), width)
}

fn pad_bytes(s: &[u8], width: usize) -> Vec<u8> {
    let mut v: Vec<u8> = s.iter().copied().take(width).collect();
    v.resize(width, b' ');
    v
}

fn pad_to_record(buf: &mut Vec<u8>) {
    let rem = buf.len() % RECORD;
    if rem != 0 {
        buf.resize(buf.len() + RECORD - rem, b' ');
    }
}
