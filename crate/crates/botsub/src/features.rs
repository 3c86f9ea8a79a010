//! Per-node feature assembly.
//!
//! A node's feature vector is the concatenation of six named blocks:
//! description and tweet-content embeddings, numerical and categorical
//! metadata (all four ingested as precomputed matrices), plus two blocks
//! computed here — tweet content categories (k-means over per-tweet
//! embeddings) and tweet temporal activity (monthly posting percentages).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::io;
use crate::kmeans::kmeans;

/// Canonical block order for the assembled feature vector.
pub const BLOCK_ORDER: [&str; 6] = [
    "description",
    "tweet",
    "num_meta",
    "cat_meta",
    "category",
    "temporal",
];

/// Dense `n x s` feature matrix with a named block schema.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    x: Array2<f64>,
    schema: Vec<(String, usize)>,
}

impl FeatureMatrix {
    pub fn new(x: Array2<f64>, schema: Vec<(String, usize)>) -> Result<FeatureMatrix> {
        let total: usize = schema.iter().map(|(_, w)| w).sum();
        if total != x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "schema widths sum to {total} but matrix has {} columns",
                x.ncols()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite feature entry".into()));
        }
        Ok(FeatureMatrix { x, schema })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn width(&self) -> usize {
        self.x.ncols()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn schema(&self) -> &[(String, usize)] {
        &self.schema
    }

    /// Column range of a named block, if present.
    pub fn block(&self, name: &str) -> Option<ArrayView2<'_, f64>> {
        let mut start = 0usize;
        for (block, width) in &self.schema {
            if block == name {
                return Some(self.x.slice(s![.., start..start + width]));
            }
            start += width;
        }
        None
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let schema_line: Vec<String> = self
            .schema
            .iter()
            .map(|(name, width)| format!("{name}:{width}"))
            .collect();
        writeln!(w, "{}", schema_line.join(",")).map_err(|e| Error::io(path, e))?;
        io::write_matrix_to(&mut w, &self.x, path)
    }

    pub fn load(path: &Path) -> Result<FeatureMatrix> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut header = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            let got = r.read(&mut byte).map_err(|e| Error::io(path, e))?;
            if got == 0 || byte[0] == b'\n' {
                break;
            }
            header.push(byte[0]);
        }
        let header = String::from_utf8(header)
            .map_err(|_| Error::format(path, "schema line is not UTF-8"))?;
        let mut schema = Vec::new();
        for part in header.split(',') {
            let (name, width) = part
                .split_once(':')
                .ok_or_else(|| Error::format(path, format!("bad schema entry `{part}`")))?;
            let width: usize = width
                .parse()
                .map_err(|_| Error::format(path, format!("bad block width in `{part}`")))?;
            schema.push((name.to_string(), width));
        }
        let x = io::read_matrix_from(&mut r, path)?;
        FeatureMatrix::new(x, schema)
    }
}

/// Ragged per-user tweet embeddings, stored as one flat row matrix plus
/// per-user offsets.
#[derive(Debug, Clone)]
pub struct TweetEmbeddings {
    flat: Array2<f64>,
    offsets: Vec<usize>,
}

impl TweetEmbeddings {
    /// Group flat rows by their owning user, preserving row order within
    /// each user (callers supply rows most-recent-first).
    pub fn from_owned_rows(
        matrix: Array2<f64>,
        owners: &[usize],
        n_users: usize,
    ) -> Result<TweetEmbeddings> {
        if owners.len() != matrix.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} owner entries for {} embedding rows",
                owners.len(),
                matrix.nrows()
            )));
        }
        for &u in owners {
            if u >= n_users {
                return Err(Error::NodeOutOfRange { id: u, n: n_users });
            }
        }
        let d = matrix.ncols();
        let mut counts = vec![0usize; n_users];
        for &u in owners {
            counts[u] += 1;
        }
        let mut offsets = vec![0usize; n_users + 1];
        for u in 0..n_users {
            offsets[u + 1] = offsets[u] + counts[u];
        }
        let mut cursor = offsets.clone();
        let mut flat = Array2::zeros((matrix.nrows(), d));
        for (row, &u) in owners.iter().enumerate() {
            flat.row_mut(cursor[u]).assign(&matrix.row(row));
            cursor[u] += 1;
        }
        Ok(TweetEmbeddings { flat, offsets })
    }

    /// Build from one matrix per user; rejects inconsistent dimensions.
    pub fn from_user_matrices(users: &[Array2<f64>]) -> Result<TweetEmbeddings> {
        let d = users
            .iter()
            .find(|m| m.nrows() > 0)
            .map(|m| m.ncols())
            .unwrap_or(0);
        let mut offsets = vec![0usize];
        let mut rows = Vec::new();
        for m in users {
            if m.nrows() > 0 && m.ncols() != d {
                return Err(Error::DimensionMismatch(format!(
                    "embedding dimension mismatch across tweets: {} vs {d}",
                    m.ncols()
                )));
            }
            for row in m.rows() {
                rows.extend(row.iter().copied());
            }
            offsets.push(offsets.last().unwrap() + m.nrows());
        }
        let total = *offsets.last().unwrap();
        let flat = Array2::from_shape_vec((total, d), rows)
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        Ok(TweetEmbeddings { flat, offsets })
    }

    pub fn n_users(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.flat.ncols()
    }

    pub fn user(&self, u: usize) -> ArrayView2<'_, f64> {
        self.flat.slice(s![self.offsets[u]..self.offsets[u + 1], ..])
    }
}

/// Load tweet embeddings from a matrix file plus an owners file with one
/// user id per line, aligned with the matrix rows.
pub fn load_tweet_embeddings(
    matrix_path: &Path,
    owners_path: &Path,
    n_users: usize,
) -> Result<TweetEmbeddings> {
    let matrix = io::read_matrix(matrix_path)?;
    let file = File::open(owners_path).map_err(|e| Error::io(owners_path, e))?;
    let mut owners = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(owners_path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let u: usize = line
            .parse()
            .map_err(|_| Error::parse(owners_path, idx + 1, format!("bad user id `{line}`")))?;
        owners.push(u);
    }
    TweetEmbeddings::from_owned_rows(matrix, &owners, n_users)
}

/// Z-score with population standard deviation; a zero std maps every
/// entry to 0.
pub fn zscore_population(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    if values.is_empty() {
        return Vec::new();
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

/// Tweet content-category block: `[z-scored distinct-cluster count ;
/// per-cluster tweet percentages]`, width `k + 1`. Users without tweets
/// get an all-zero row.
pub fn category_feature(
    tweets: &TweetEmbeddings,
    k: usize,
    max_tweets: usize,
    kmeans_max_iters: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let n = tweets.n_users();
    let mut block = Array2::zeros((n, k + 1));

    // Pool capped per-user tweets into one point set.
    let mut pooled_rows = Vec::new();
    let mut row_owner = Vec::new();
    for u in 0..n {
        let rows = tweets.user(u);
        for row in rows.rows().into_iter().take(max_tweets) {
            pooled_rows.extend(row.iter().copied());
            row_owner.push(u);
        }
    }
    if row_owner.is_empty() {
        return Ok(block);
    }
    let pooled = Array2::from_shape_vec((row_owner.len(), tweets.dim()), pooled_rows)
        .expect("pooled shape is consistent by construction");
    let clustering = kmeans(pooled.view(), k, kmeans_max_iters, seed)?;

    let mut cluster_counts = vec![vec![0usize; k]; n];
    for (row, &u) in row_owner.iter().enumerate() {
        cluster_counts[u][clustering.assignments[row]] += 1;
    }

    let distinct: Vec<f64> = cluster_counts
        .iter()
        .map(|counts| counts.iter().filter(|&&c| c > 0).count() as f64)
        .collect();
    let z = zscore_population(&distinct);

    for u in 0..n {
        let total: usize = cluster_counts[u].iter().sum();
        if total == 0 {
            continue; // all-zero row
        }
        block[(u, 0)] = z[u];
        for c in 0..k {
            block[(u, c + 1)] = cluster_counts[u][c] as f64 / total as f64;
        }
    }
    Ok(block)
}

/// Temporal activity block: per-month percentage of the user's tweets
/// over a fixed window, zero-filled for missing months.
pub fn temporal_feature(
    counts: &[(usize, usize, i64)],
    n_users: usize,
    window: usize,
) -> Result<Array2<f64>> {
    let mut totals = vec![0i64; n_users];
    let mut table = Array2::zeros((n_users, window));
    for &(user, month, count) in counts {
        if user >= n_users {
            return Err(Error::NodeOutOfRange {
                id: user,
                n: n_users,
            });
        }
        if month >= window {
            return Err(Error::InvalidData(format!(
                "month index {month} outside window of {window}"
            )));
        }
        if count < 0 {
            return Err(Error::InvalidData(format!(
                "negative tweet count {count} for user {user}"
            )));
        }
        table[(user, month)] += count as f64;
        totals[user] += count;
    }
    for u in 0..n_users {
        if totals[u] > 0 {
            let total = totals[u] as f64;
            for m in 0..window {
                table[(u, m)] /= total;
            }
        }
    }
    Ok(table)
}

/// Load monthly counts from TSV `user_id<TAB>month_index<TAB>count`.
pub fn load_monthly_counts(path: &Path) -> Result<Vec<(usize, usize, i64)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (u, m, c) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(u), Some(m), Some(c), None) => (u, m, c),
            _ => {
                return Err(Error::parse(
                    path,
                    lineno,
                    "expected `user_id<TAB>month_index<TAB>count`",
                ));
            }
        };
        let u: usize = u
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad user id `{u}`")))?;
        let m: usize = m
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad month index `{m}`")))?;
        let c: i64 = c
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad count `{c}`")))?;
        out.push((u, m, c));
    }
    Ok(out)
}

/// Concatenate named per-user blocks, in canonical block order, into one
/// feature matrix.
pub fn assemble_features(blocks: Vec<(String, Array2<f64>)>) -> Result<FeatureMatrix> {
    if blocks.is_empty() {
        return Err(Error::InvalidParameter("no feature blocks given".into()));
    }
    let n = blocks[0].1.nrows();
    let mut last_rank = None;
    for (name, block) in &blocks {
        let rank = BLOCK_ORDER
            .iter()
            .position(|b| b == name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown block name `{name}`")))?;
        if let Some(prev) = last_rank {
            if rank <= prev {
                return Err(Error::InvalidParameter(format!(
                    "block `{name}` out of canonical order"
                )));
            }
        }
        last_rank = Some(rank);
        if block.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "block `{name}` has {} rows, expected {n}",
                block.nrows()
            )));
        }
        if block.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite entry in block `{name}`"
            )));
        }
    }
    let width: usize = blocks.iter().map(|(_, b)| b.ncols()).sum();
    let mut x = Array2::zeros((n, width));
    let mut start = 0usize;
    let mut schema = Vec::with_capacity(blocks.len());
    for (name, block) in &blocks {
        x.slice_mut(s![.., start..start + block.ncols()]).assign(block);
        schema.push((name.clone(), block.ncols()));
        start += block.ncols();
    }
    FeatureMatrix::new(x, schema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_cluster_embeddings() -> TweetEmbeddings {
        // Three users: user 0 tweets around (0,0), user 1 around (10,10),
        // user 2 has no tweets.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut users = Vec::new();
        let mut mk = |cx: f64, cy: f64, count: usize| -> Array2<f64> {
            let mut m = Array2::zeros((count, 2));
            for i in 0..count {
                m[(i, 0)] = cx + rng.gen::<f64>() * 0.1;
                m[(i, 1)] = cy + rng.gen::<f64>() * 0.1;
            }
            m
        };
        users.push(mk(0.0, 0.0, 8));
        users.push(mk(10.0, 10.0, 8));
        users.push(Array2::zeros((0, 2)));
        TweetEmbeddings::from_user_matrices(&users).unwrap()
    }

    #[test]
    fn one_cluster_user_gets_one_hot_percentages() {
        let tweets = single_cluster_embeddings();
        let block = category_feature(&tweets, 2, 200, 50, 0).unwrap();
        assert_eq!(block.ncols(), 3);
        // Each tweeting user touches exactly one cluster.
        for u in 0..2 {
            let pct: Vec<f64> = (0..2).map(|c| block[(u, c + 1)]).collect();
            assert!(pct.iter().any(|&p| (p - 1.0).abs() < 1e-12));
            assert_abs_diff_eq!(pct.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        // Zero-tweet user row is all zeros.
        for c in 0..3 {
            assert_eq!(block[(2, c)], 0.0);
        }
    }

    #[test]
    fn identical_distinct_counts_zero_z() {
        let tweets = single_cluster_embeddings();
        let block = category_feature(&tweets, 2, 200, 50, 0).unwrap();
        // Users 0 and 1 both touch one distinct cluster; user 2 touches
        // zero, so std > 0 and z is nonzero for tweeters. Recompute with
        // only the two tweeting users to get the degenerate case.
        let two_users = TweetEmbeddings::from_user_matrices(&[
            tweets.user(0).to_owned(),
            tweets.user(1).to_owned(),
        ])
        .unwrap();
        let block2 = category_feature(&two_users, 2, 200, 50, 0).unwrap();
        assert_eq!(block2[(0, 0)], 0.0);
        assert_eq!(block2[(1, 0)], 0.0);
        assert!(block[(0, 0)] != 0.0);
    }

    #[test]
    fn percentages_sum_to_one_or_zero() {
        let tweets = single_cluster_embeddings();
        let block = category_feature(&tweets, 2, 200, 50, 0).unwrap();
        for u in 0..tweets.n_users() {
            let total: f64 = (0..2).map(|c| block[(u, c + 1)]).sum();
            let expected = if tweets.user(u).nrows() > 0 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(total, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn ragged_dimension_mismatch_rejected() {
        let users = vec![Array2::<f64>::zeros((2, 3)), Array2::<f64>::zeros((1, 4))];
        let err = TweetEmbeddings::from_user_matrices(&users).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"));
    }

    #[test]
    fn temporal_uniform_and_one_hot() {
        let counts: Vec<(usize, usize, i64)> = (0..12).map(|m| (0usize, m, 10i64)).collect();
        let block = temporal_feature(&counts, 3, 12).unwrap();
        for m in 0..12 {
            assert_abs_diff_eq!(block[(0, m)], 1.0 / 12.0, epsilon = 1e-12);
        }
        let block = temporal_feature(&[(1, 4, 5)], 3, 12).unwrap();
        assert_abs_diff_eq!(block[(1, 4)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(block.row(1).sum(), 1.0, epsilon = 1e-12);
        // Zero tweets everywhere stays a zero vector, not NaN.
        let zero = temporal_feature(&[], 2, 12).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn temporal_rejects_bad_input() {
        assert!(temporal_feature(&[(0, 0, -1)], 1, 12).is_err());
        assert!(temporal_feature(&[(0, 12, 1)], 1, 12).is_err());
        assert!(temporal_feature(&[(5, 0, 1)], 1, 12).is_err());
    }

    #[test]
    fn assemble_concatenates_in_order() {
        let blocks = vec![
            ("description".to_string(), Array2::<f64>::zeros((4, 8))),
            ("tweet".to_string(), Array2::<f64>::ones((4, 8))),
            ("num_meta".to_string(), Array2::<f64>::zeros((4, 4))),
            ("cat_meta".to_string(), Array2::<f64>::zeros((4, 2))),
            ("category".to_string(), Array2::<f64>::zeros((4, 21))),
            ("temporal".to_string(), Array2::<f64>::zeros((4, 12))),
        ];
        let fm = assemble_features(blocks).unwrap();
        assert_eq!(fm.width(), 55);
        assert_eq!(fm.schema().len(), 6);
        assert_eq!(fm.block("tweet").unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn assemble_rejects_row_mismatch_and_nan() {
        let blocks = vec![
            ("description".to_string(), Array2::<f64>::zeros((4, 2))),
            ("tweet".to_string(), Array2::<f64>::zeros((3, 2))),
        ];
        assert!(assemble_features(blocks).is_err());
        let blocks = vec![(
            "description".to_string(),
            array![[f64::NAN, 0.0], [0.0, 0.0]],
        )];
        assert!(assemble_features(blocks).is_err());
        let blocks = vec![
            ("tweet".to_string(), Array2::<f64>::zeros((2, 2))),
            ("description".to_string(), Array2::<f64>::zeros((2, 2))),
        ];
        assert!(assemble_features(blocks).is_err(), "order must be canonical");
    }

    #[test]
    fn feature_matrix_roundtrip() {
        let blocks = vec![
            ("description".to_string(), array![[1.5, -2.0], [0.25, 4.0]]),
            ("temporal".to_string(), array![[0.5], [0.125]]),
        ];
        let fm = assemble_features(blocks).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.fm");
        fm.save(&path).unwrap();
        let back = FeatureMatrix::load(&path).unwrap();
        assert_eq!(back, fm);
        // Second cycle is byte-identical.
        let path2 = dir.path().join("features2.fm");
        back.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn zscore_properties() {
        let values = [1.0, 2.0, 3.0, 4.0, 10.0];
        let z = zscore_population(&values);
        let mean: f64 = z.iter().sum::<f64>() / z.len() as f64;
        let var: f64 = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / z.len() as f64;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(var.sqrt(), 1.0, epsilon = 1e-9);
        assert_eq!(zscore_population(&[3.0, 3.0, 3.0]), vec![0.0, 0.0, 0.0]);
    }
}
