use std::collections::HashSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use super::{FeatureKind, Hin, HinBuilder, NodeType};
use crate::error::{Error, Result};

/// Knobs for MovieLens ingestion.
#[derive(Clone, Debug, Default)]
pub struct IngestOptions {
    /// Supplemental `movieId<TAB>kind<TAB>value` file. When `None`,
    /// `extra_features.tsv` inside the data directory is used if present.
    pub extra_features: Option<PathBuf>,
    /// Skip `tags.csv` even if it exists.
    pub skip_tags: bool,
}

/// Reads `ratings.csv`, `movies.csv` and `tags.csv` from `dir` into a network
/// of users, movies and year/genre/tag entities.
pub fn ingest_movielens_small(dir: impl AsRef<Path>) -> Result<Hin> {
    ingest_movielens_with(dir, &IngestOptions::default())
}

pub fn ingest_movielens_with(dir: impl AsRef<Path>, opts: &IngestOptions) -> Result<Hin> {
    let dir = dir.as_ref();
    let mut b = HinBuilder::new();

    let ratings = dir.join("ratings.csv");
    let mut n = 0usize;
    for_each_record(
        &ratings,
        &["userId", "movieId", "rating", "timestamp"],
        |line, rec| {
            let user = parse_id(&ratings, line, rec, 0)?;
            let movie = parse_id(&ratings, line, rec, 1)?;
            field(&ratings, line, rec, 2)?
                .parse::<f64>()
                .map_err(|e| ingest_err(&ratings, line, format!("bad rating: {e}")))?;
            let ts = field(&ratings, line, rec, 3)?
                .parse::<i64>()
                .map_err(|e| ingest_err(&ratings, line, format!("bad timestamp: {e}")))?;
            b.add_interaction(&user, &movie, ts);
            n += 1;
            Ok(())
        },
    )?;
    if n == 0 {
        return Err(ingest_err(&ratings, 1, "no ratings".into()));
    }

    let movies = dir.join("movies.csv");
    for_each_record(&movies, &["movieId", "title", "genres"], |line, rec| {
        let movie = parse_id(&movies, line, rec, 0)?;
        if !b.contains(NodeType::Item, &movie) {
            return Ok(());
        }
        if let Some(year) = title_year(field(&movies, line, rec, 1)?) {
            b.add_feature_edge(NodeType::Item, &movie, FeatureKind::Year, year)?;
        }
        for genre in field(&movies, line, rec, 2)?.split('|') {
            let genre = genre.trim();
            if genre.is_empty() || genre == "(no genres listed)" {
                continue;
            }
            b.add_feature_edge(NodeType::Item, &movie, FeatureKind::Genre, genre)?;
        }
        Ok(())
    })?;

    let tags = dir.join("tags.csv");
    if !opts.skip_tags {
        for_each_record(
            &tags,
            &["userId", "movieId", "tag", "timestamp"],
            |line, rec| {
                let user = parse_id(&tags, line, rec, 0)?;
                let movie = parse_id(&tags, line, rec, 1)?;
                let tag = field(&tags, line, rec, 2)?.trim().to_lowercase();
                if tag.is_empty() {
                    return Ok(());
                }
                if b.contains(NodeType::User, &user) {
                    b.add_feature_edge(NodeType::User, &user, FeatureKind::Tag, &tag)?;
                }
                if b.contains(NodeType::Item, &movie) {
                    b.add_feature_edge(NodeType::Item, &movie, FeatureKind::Tag, &tag)?;
                }
                Ok(())
            },
        )?;
    }

    let extra = opts
        .extra_features
        .clone()
        .or_else(|| Some(dir.join("extra_features.tsv")).filter(|p| p.exists()));
    if let Some(path) = extra {
        read_extra_features(&path, &mut b)?;
    }

    b.build()
}

/// Year in a trailing `(YYYY)` of a movie title.
pub(crate) fn title_year(title: &str) -> Option<&str> {
    let t = title.trim_end();
    let inner = t.strip_suffix(')')?;
    let open = inner.rfind('(')?;
    let year = &inner[open + 1..];
    (year.len() == 4 && year.bytes().all(|c| c.is_ascii_digit())).then_some(year)
}

fn read_extra_features(path: &Path, b: &mut HinBuilder) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut seen_known = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if line == 1 && rec.get(0).is_some_and(|f| f.trim() == "movieId") {
            continue;
        }
        if rec.len() != 3 {
            return Err(ingest_err(
                path,
                line,
                format!("expected 3 columns, got {}", rec.len()),
            ));
        }
        let movie = rec[0].trim();
        let kind = FeatureKind::parse(&rec[1])
            .filter(|k| {
                matches!(
                    k,
                    FeatureKind::Actor | FeatureKind::Director | FeatureKind::Writer
                )
            })
            .ok_or_else(|| ingest_err(path, line, format!("unknown feature kind {:?}", &rec[1])))?;
        let value = rec[2].trim();
        if value.is_empty() || !b.contains(NodeType::Item, movie) {
            continue;
        }
        seen_known.insert(movie.to_string());
        b.add_feature_edge(NodeType::Item, movie, kind, value)?;
    }
    log::debug!(
        "{} movies enriched from {}",
        seen_known.len(),
        path.display()
    );
    Ok(())
}

fn for_each_record<F>(path: &Path, header: &[&str], mut f: F) -> Result<()>
where
    F: FnMut(u64, &csv::StringRecord) -> Result<()>,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let got = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if got.iter().map(str::trim).ne(header.iter().copied()) {
        return Err(ingest_err(
            path,
            1,
            format!(
                "expected header {}, found {}",
                header.join(","),
                got.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut rec = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut rec) {
            Ok(true) => {
                let line = rec.position().map_or(0, |p| p.line());
                f(line, &rec)?;
            }
            Ok(false) => return Ok(()),
            Err(e) => return Err(csv_err(path, e)),
        }
    }
}

fn field<'a>(path: &Path, line: u64, rec: &'a csv::StringRecord, i: usize) -> Result<&'a str> {
    rec.get(i)
        .ok_or_else(|| ingest_err(path, line, format!("missing column {}", i + 1)))
}

fn parse_id(path: &Path, line: u64, rec: &csv::StringRecord, i: usize) -> Result<String> {
    let raw = field(path, line, rec, i)?.trim();
    raw.parse::<u64>()
        .map(|v| v.to_string())
        .map_err(|_| ingest_err(path, line, format!("bad id {raw:?}")))
}

fn ingest_err(path: &Path, line: u64, message: String) -> Error {
    Error::Ingest {
        file: path.to_path_buf(),
        line,
        message,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    ingest_err(path, line, e.to_string())
}
