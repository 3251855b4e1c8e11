#include "tggm/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tggm/errors.hpp"
#include "tggm/random.hpp"

namespace tggm {

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> cells;
  if (delim == ' ') {
    // whitespace mode: any run of blanks/tabs separates cells
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) cells.push_back(tok);
    return cells;
  }
  std::string cur;
  for (char ch : line) {
    if (ch == delim) {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  cells.push_back(cur);
  return cells;
}

bool parse_double(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (*(e - 1) == ' ' || *(e - 1) == '\t')) --e;
  if (b == e) return false;
  auto res = std::from_chars(b, e, out);
  return res.ec == std::errc() && res.ptr == e;
}

std::uint32_t read_be32(std::istream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
         (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

}  // namespace

Dataset load_csv_regression(const std::string& path,
                            const std::string& target_column,
                            char delimiter) {
  std::ifstream in(path);
  if (!in) throw IngestError("load_csv_regression: cannot open " + path);

  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    lines.push_back(line);
  }
  if (lines.empty()) throw IngestError("load_csv_regression: empty file " + path);

  // a non-numeric cell anywhere in the first line marks it as a header
  std::vector<std::string> header = split_line(lines.front(), delimiter);
  bool has_header = false;
  for (const auto& cell : header) {
    double tmp;
    if (!parse_double(cell, tmp)) {
      has_header = true;
      break;
    }
  }
  const std::size_t first_row = has_header ? 1 : 0;
  const int n_cols = static_cast<int>(header.size());
  const int n_rows = static_cast<int>(lines.size() - first_row);
  if (n_rows == 0) throw IngestError("load_csv_regression: no data rows");

  int target = 0;
  double as_num;
  if (parse_double(target_column, as_num)) {
    target = static_cast<int>(as_num);
    if (target < 0) target += n_cols;
  } else {
    if (!has_header)
      throw IngestError("load_csv_regression: named target needs a header row");
    auto it = std::find(header.begin(), header.end(), target_column);
    if (it == header.end())
      throw IngestError("load_csv_regression: no column named " + target_column);
    target = static_cast<int>(it - header.begin());
  }
  if (target < 0 || target >= n_cols)
    throw IngestError("load_csv_regression: target column out of range");

  Dataset ds;
  ds.X.resize(n_cols - 1, n_rows);
  ds.Y.resize(1, n_rows);
  for (int i = 0; i < n_rows; ++i) {
    const auto cells = split_line(lines[first_row + i], delimiter);
    if (static_cast<int>(cells.size()) != n_cols)
      throw IngestError("load_csv_regression: row " + std::to_string(i + 1) +
                        " has " + std::to_string(cells.size()) +
                        " cells, expected " + std::to_string(n_cols));
    int f = 0;
    for (int c = 0; c < n_cols; ++c) {
      double v;
      if (!parse_double(cells[c], v))
        throw IngestError("load_csv_regression: non-numeric cell at row " +
                          std::to_string(i + 1) + ", column " +
                          std::to_string(c));
      if (c == target)
        ds.Y(0, i) = v;
      else
        ds.X(f++, i) = v;
    }
  }
  return ds;
}

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path, int max_count) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw FormatError("load_idx: cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw FormatError("load_idx: cannot open " + labels_path);

  const std::uint32_t img_magic = read_be32(img);
  if (!img || img_magic != 2051)
    throw FormatError("load_idx: bad image magic (expected 2051)");
  const std::uint32_t n_img = read_be32(img);
  const std::uint32_t rows = read_be32(img);
  const std::uint32_t cols = read_be32(img);

  const std::uint32_t lab_magic = read_be32(lab);
  if (!lab || lab_magic != 2049)
    throw FormatError("load_idx: bad label magic (expected 2049)");
  const std::uint32_t n_lab = read_be32(lab);
  if (n_img != n_lab)
    throw FormatError("load_idx: image/label count mismatch");

  std::uint32_t keep = n_img;
  if (max_count > 0 && static_cast<std::uint32_t>(max_count) < keep)
    keep = static_cast<std::uint32_t>(max_count);

  const std::size_t d = static_cast<std::size_t>(rows) * cols;
  Dataset ds;
  ds.X.resize(static_cast<Eigen::Index>(d), keep);
  ds.labels.resize(keep);
  std::vector<unsigned char> buf(d);
  for (std::uint32_t i = 0; i < keep; ++i) {
    img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(d));
    if (!img) throw FormatError("load_idx: truncated image file");
    for (std::size_t k = 0; k < d; ++k)
      ds.X(static_cast<Eigen::Index>(k), i) = buf[k] / 255.0;
    char lb;
    lab.read(&lb, 1);
    if (!lab) throw FormatError("load_idx: truncated label file");
    ds.labels[i] = static_cast<unsigned char>(lb);
  }
  return ds;
}

Dataset load_sparse_docs(const std::string& path, int vocab_size,
                         bool binarize) {
  std::ifstream in(path);
  if (!in) throw IngestError("load_sparse_docs: cannot open " + path);

  std::vector<int> labels;
  std::vector<std::vector<std::pair<int, double>>> docs;
  int max_idx = 0;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ss(line);
    int label;
    if (!(ss >> label))
      throw IngestError("load_sparse_docs: bad label on line " +
                        std::to_string(line_no));
    labels.push_back(label);
    std::vector<std::pair<int, double>> doc;
    std::string tok;
    while (ss >> tok) {
      const auto colon = tok.find(':');
      double idx_val, cnt;
      if (colon == std::string::npos ||
          !parse_double(tok.substr(0, colon), idx_val) ||
          !parse_double(tok.substr(colon + 1), cnt))
        throw IngestError("load_sparse_docs: malformed pair '" + tok +
                          "' on line " + std::to_string(line_no));
      const int idx = static_cast<int>(idx_val);
      if (idx < 1 || (vocab_size > 0 && idx > vocab_size))
        throw IngestError("load_sparse_docs: index out of range on line " +
                          std::to_string(line_no));
      max_idx = std::max(max_idx, idx);
      doc.emplace_back(idx - 1, binarize ? (cnt > 0.0 ? 1.0 : 0.0) : cnt);
    }
    docs.push_back(std::move(doc));
  }
  const int d = vocab_size > 0 ? vocab_size : max_idx;
  Dataset ds;
  ds.X = Eigen::MatrixXd::Zero(d, static_cast<Eigen::Index>(docs.size()));
  ds.labels = std::move(labels);
  for (std::size_t i = 0; i < docs.size(); ++i)
    for (const auto& [idx, cnt] : docs[i])
      ds.X(idx, static_cast<Eigen::Index>(i)) = cnt;
  return ds;
}

namespace {

Stats column_stats(const Eigen::MatrixXd& M) {
  Stats st;
  st.mean = M.rowwise().mean();
  st.stdev.resize(M.rows());
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    const double mu = st.mean(r);
    double acc = 0.0;
    for (Eigen::Index c = 0; c < M.cols(); ++c) {
      const double d = M(r, c) - mu;
      acc += d * d;
    }
    st.stdev(r) = std::sqrt(acc / M.cols());
  }
  return st;
}

void apply_stats(Eigen::MatrixXd& M, const Stats& st) {
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    if (st.stdev(r) <= 1e-12) continue;  // constant feature left unscaled
    M.row(r) = (M.row(r).array() - st.mean(r)) / st.stdev(r);
  }
}

// stats as actually applied (identity for floored rows), so that
// de-normalization round-trips exactly
Stats effective_stats(const Stats& st) {
  Stats eff = st;
  for (Eigen::Index r = 0; r < st.stdev.size(); ++r) {
    if (st.stdev(r) <= 1e-12) {
      eff.mean(r) = 0.0;
      eff.stdev(r) = 1.0;
    }
  }
  return eff;
}

}  // namespace

std::pair<Dataset, Dataset> standardize(const Dataset& train,
                                        const Dataset& test) {
  if (train.n() == 0) throw ConfigError("standardize: empty training set");
  Dataset tr = train;
  Dataset te = test;
  const Stats fs = effective_stats(column_stats(train.X));
  apply_stats(tr.X, fs);
  if (te.n() > 0) apply_stats(te.X, fs);
  tr.feature_stats = fs;
  te.feature_stats = fs;
  if (!train.classification() && train.Y.size() > 0) {
    const Stats ts = effective_stats(column_stats(train.Y));
    apply_stats(tr.Y, ts);
    if (te.Y.size() > 0) apply_stats(te.Y, ts);
    tr.target_stats = ts;
    te.target_stats = ts;
  }
  return {std::move(tr), std::move(te)};
}

std::vector<std::pair<std::vector<int>, std::vector<int>>> split_protocol(
    const Dataset& dataset, int n_repeats, double train_fraction,
    std::uint64_t seed) {
  const int N = dataset.n();
  if (!(train_fraction > 0.0) || !(train_fraction < 1.0))
    throw ConfigError("split_protocol: train_fraction must be in (0,1)");
  const int n_train = static_cast<int>(std::floor(N * train_fraction));
  if (n_train < 1 || n_train >= N)
    throw ConfigError("split_protocol: degenerate split sizes");
  if (n_repeats < 1) throw ConfigError("split_protocol: n_repeats must be >= 1");

  RandomStream rng(seed);
  std::vector<std::pair<std::vector<int>, std::vector<int>>> splits;
  splits.reserve(static_cast<std::size_t>(n_repeats));
  for (int r = 0; r < n_repeats; ++r) {
    const std::vector<int> perm = rng.permutation(N);
    splits.emplace_back(std::vector<int>(perm.begin(), perm.begin() + n_train),
                        std::vector<int>(perm.begin() + n_train, perm.end()));
  }
  return splits;
}

Dataset subset(const Dataset& dataset, const std::vector<int>& indices) {
  Dataset out;
  out.X.resize(dataset.X.rows(), static_cast<Eigen::Index>(indices.size()));
  if (dataset.Y.size() > 0)
    out.Y.resize(dataset.Y.rows(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t j = 0; j < indices.size(); ++j) {
    out.X.col(static_cast<Eigen::Index>(j)) = dataset.X.col(indices[j]);
    if (dataset.Y.size() > 0)
      out.Y.col(static_cast<Eigen::Index>(j)) = dataset.Y.col(indices[j]);
  }
  if (dataset.classification()) {
    out.labels.reserve(indices.size());
    for (int idx : indices)
      out.labels.push_back(dataset.labels[static_cast<std::size_t>(idx)]);
  }
  out.feature_stats = dataset.feature_stats;
  out.target_stats = dataset.target_stats;
  return out;
}

}  // namespace tggm
