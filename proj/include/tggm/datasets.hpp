#ifndef TGGM_DATASETS_HPP
#define TGGM_DATASETS_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace tggm {

struct Stats {
  Eigen::VectorXd mean;
  Eigen::VectorXd stdev;
  bool empty() const { return mean.size() == 0; }
};

struct Dataset {
  Eigen::MatrixXd X;        // d x N features (column per sample)
  Eigen::MatrixXd Y;        // n x N regression targets
  std::vector<int> labels;  // classification labels (empty for regression)
  Stats feature_stats;      // train-split stats the data was scaled with
  Stats target_stats;

  bool classification() const { return !labels.empty(); }
  int n() const { return static_cast<int>(X.cols()); }
  int dim() const { return static_cast<int>(X.rows()); }
};

// Numeric CSV table, one row per sample. target_column is a 0-based
// index (negative counts from the end) or a header name. A header row is
// detected by non-numeric cells in the first line. delimiter ' ' means
// any run of blanks.
Dataset load_csv_regression(const std::string& path,
                            const std::string& target_column = "-1",
                            char delimiter = ',');

// IDX image/label pair (big-endian, magic 2051/2049); pixels scaled to
// [0,1]. max_count > 0 keeps only the first max_count samples.
Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path, int max_count = 0);

// Sparse bag-of-words lines: `label idx:count ...` with 1-based indices.
// vocab_size 0 infers the dimension from the largest index seen.
Dataset load_sparse_docs(const std::string& path, int vocab_size = 0,
                         bool binarize = false);

// Zero-mean/unit-std per feature (and per regression target) using
// train-split statistics; features with std below 1e-12 are left
// untouched. Returns scaled copies carrying the stats.
std::pair<Dataset, Dataset> standardize(const Dataset& train,
                                        const Dataset& test);

// n_repeats independent uniform shuffles; train gets
// floor(N * train_fraction) indices, the remainder goes to test.
std::vector<std::pair<std::vector<int>, std::vector<int>>> split_protocol(
    const Dataset& dataset, int n_repeats, double train_fraction,
    std::uint64_t seed);

Dataset subset(const Dataset& dataset, const std::vector<int>& indices);

}  // namespace tggm

#endif
