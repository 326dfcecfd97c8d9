//! Converters from the distributed benchmark corpora to `label<TAB>text` files.
//!
//! | corpus | expected source files | output |
//! |---|---|---|
//! | `mr` | `rt-polarity.pos`, `rt-polarity.neg` | `data.tsv` |
//! | `subj` | `quote.tok.gt9.5000`, `plot.tok.gt9.5000` | `data.tsv` |
//! | `cr` | `custrev.pos`, `custrev.neg` | `data.tsv` |
//! | `sst1`, `sst2` | `train.txt`, `dev.txt`, `test.txt` (PTB trees, optionally under `trees/`) | `train.tsv`, `dev.tsv`, `test.tsv` |
//! | `trec` | `train_5500.label`, `TREC_10.label` | `train.tsv`, `test.tsv` |
//!
//! Source files may be UTF-8 or Latin-1; lines that are not valid UTF-8 are
//! read as Latin-1.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corpus {
    Mr,
    Subj,
    Cr,
    Sst1,
    Sst2,
    Trec,
}

impl Corpus {
    pub const ALL: [Corpus; 6] = [Corpus::Cr, Corpus::Mr, Corpus::Subj, Corpus::Sst1, Corpus::Sst2, Corpus::Trec];

    pub fn name(self) -> &'static str {
        match self {
            Corpus::Mr => "mr",
            Corpus::Subj => "subj",
            Corpus::Cr => "cr",
            Corpus::Sst1 => "sst1",
            Corpus::Sst2 => "sst2",
            Corpus::Trec => "trec",
        }
    }

    /// True when the corpus ships train/test splits rather than one pool for cross-validation.
    pub fn has_standard_split(self) -> bool {
        matches!(self, Corpus::Sst1 | Corpus::Sst2 | Corpus::Trec)
    }
}

impl fmt::Display for Corpus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Corpus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase().replace('-', "");
        Corpus::ALL
            .into_iter()
            .find(|c| c.name() == lower)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown corpus `{s}` (expected mr, subj, cr, sst1, sst2 or trec)")))
    }
}

/// Reads a file as lines, decoding each line as UTF-8 or else Latin-1.
fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(bytes
        .split(|&b| b == b'\n')
        .map(|line| {
            let line = line.strip_suffix(b"\r").unwrap_or(line);
            match std::str::from_utf8(line) {
                Ok(s) => s.to_string(),
                Err(_) => line.iter().map(|&b| b as char).collect(),
            }
        })
        .filter(|l| !l.trim().is_empty())
        .collect())
}

fn flatten(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn find(src: &Path, names: &[&str]) -> Result<PathBuf> {
    names
        .iter()
        .map(|n| src.join(n))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::InvalidArgument(format!("{} not found under {}", names[0], src.display())))
}

fn labeled(label: &str, lines: Vec<String>) -> Vec<(String, String)> {
    lines.into_iter().map(|l| (label.to_string(), flatten(&l))).collect()
}

/// Splits a TREC line `COARSE:fine question text` into its coarse label and text.
pub fn parse_trec_line(line: &str) -> Option<(String, String)> {
    let (label, text) = line.trim().split_once(' ')?;
    let coarse = label.split(':').next()?;
    if coarse.is_empty() {
        return None;
    }
    Some((coarse.to_string(), flatten(text)))
}

/// Root label and space-joined leaves of a PTB-style sentiment tree.
pub fn parse_sentiment_tree(line: &str) -> Option<(u8, String)> {
    let mut root = None;
    let mut words = Vec::new();
    let mut expect_label = false;
    let mut depth = 0usize;
    let mut token = String::new();
    let mut flush = |token: &mut String, expect_label: &mut bool, depth: usize, root: &mut Option<u8>| {
        if token.is_empty() {
            return;
        }
        if *expect_label {
            if depth == 1 {
                *root = token.parse().ok();
            }
            *expect_label = false;
        } else {
            words.push(match token.as_str() {
                "-LRB-" => "(".to_string(),
                "-RRB-" => ")".to_string(),
                _ => token.clone(),
            });
        }
        token.clear();
    };
    for ch in line.trim().chars() {
        match ch {
            '(' => {
                flush(&mut token, &mut expect_label, depth, &mut root);
                depth += 1;
                expect_label = true;
            }
            ')' => {
                flush(&mut token, &mut expect_label, depth, &mut root);
                depth = depth.checked_sub(1)?;
            }
            c if c.is_whitespace() => flush(&mut token, &mut expect_label, depth, &mut root),
            c => token.push(c),
        }
    }
    if depth != 0 {
        return None;
    }
    Some((root?, words.join(" ")))
}

const SST_LABELS: [&str; 5] = ["very negative", "negative", "neutral", "positive", "very positive"];

fn sst_file(src: &Path, split: &str, binary: bool) -> Result<Vec<(String, String)>> {
    let name = format!("{split}.txt");
    let trees_name = format!("trees/{split}.txt");
    let path = find(src, &[&name, &trees_name])?;
    let mut out = Vec::new();
    for (i, line) in read_lines(&path)?.iter().enumerate() {
        let (label, text) = parse_sentiment_tree(line).ok_or_else(|| Error::Parse {
            path: path.clone(),
            line: i + 1,
            message: "malformed sentiment tree".into(),
        })?;
        let name = match (binary, label) {
            (_, l) if l > 4 => {
                return Err(Error::Parse {
                    path: path.clone(),
                    line: i + 1,
                    message: format!("sentiment label {l} outside 0..=4"),
                })
            }
            (true, 2) => continue,
            (true, l) => {
                if l < 2 {
                    "negative"
                } else {
                    "positive"
                }
            }
            (false, l) => SST_LABELS[l as usize],
        };
        out.push((name.to_string(), text));
    }
    Ok(out)
}

fn trec_file(path: &Path) -> Result<Vec<(String, String)>> {
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, line)| {
            parse_trec_line(line).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected `LABEL:fine text`".into(),
            })
        })
        .collect()
}

fn write_tsv(path: &Path, rows: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (label, body) in rows {
        text.push_str(label);
        text.push('\t');
        text.push_str(&body.replace(['\t', '\r', '\n'], " "));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Converts the raw files of `corpus` found in `src` and writes canonical
/// files into `out_dir`. Returns the written paths.
pub fn convert_corpus(corpus: Corpus, src: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let splits: Vec<(&str, Vec<(String, String)>)> = match corpus {
        Corpus::Mr => {
            let mut rows = labeled("positive", read_lines(&find(src, &["rt-polarity.pos"])?)?);
            rows.extend(labeled("negative", read_lines(&find(src, &["rt-polarity.neg"])?)?));
            vec![("data", rows)]
        }
        Corpus::Subj => {
            let mut rows = labeled("subjective", read_lines(&find(src, &["quote.tok.gt9.5000"])?)?);
            rows.extend(labeled("objective", read_lines(&find(src, &["plot.tok.gt9.5000"])?)?));
            vec![("data", rows)]
        }
        Corpus::Cr => {
            let mut rows = labeled("positive", read_lines(&find(src, &["custrev.pos"])?)?);
            rows.extend(labeled("negative", read_lines(&find(src, &["custrev.neg"])?)?));
            vec![("data", rows)]
        }
        Corpus::Sst1 | Corpus::Sst2 => {
            let binary = corpus == Corpus::Sst2;
            vec![
                ("train", sst_file(src, "train", binary)?),
                ("dev", sst_file(src, "dev", binary)?),
                ("test", sst_file(src, "test", binary)?),
            ]
        }
        Corpus::Trec => vec![
            ("train", trec_file(&find(src, &["train_5500.label"])?)?),
            ("test", trec_file(&find(src, &["TREC_10.label"])?)?),
        ],
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let mut written = Vec::new();
    for (name, rows) in splits {
        let path = out_dir.join(format!("{name}.tsv"));
        write_tsv(&path, &rows)?;
        written.push(path);
    }
    Ok(written)
}
