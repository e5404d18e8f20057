#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace paramap::data {

struct TabularDataset {
  std::size_t n_rows = 0;
  std::size_t n_features = 0;
  std::vector<double> features;  // row-major n_rows x n_features
  std::vector<int> labels;
  int n_classes = 0;
  std::vector<std::string> feature_names;
  std::string label_name = "label";
  std::vector<std::string> class_names;  // class index -> original label text

  [[nodiscard]] double at(std::size_t row, std::size_t col) const { return features[row * n_features + col]; }
  [[nodiscard]] const double* row(std::size_t r) const { return features.data() + r * n_features; }
};

// Pixels are stored n x H x W x C, values in [0, 1].
struct ImageDataset {
  std::size_t n = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> pixels;
  std::vector<int> labels;
  int n_classes = 0;

  [[nodiscard]] std::size_t image_size() const {
    return static_cast<std::size_t>(height) * width * channels;
  }
};

template <class D>
struct SplitPair {
  D train;
  D test;
  double ratio = 0.9;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
};

using TabularSplit = SplitPair<TabularDataset>;
using ImageSplit = SplitPair<ImageDataset>;

// Load failure at a known location. Rows count file lines from 1 (the header
// is line 1); columns count from 1.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t row, std::size_t col, const std::string& what);
  [[nodiscard]] std::size_t row() const { return row_; }
  [[nodiscard]] std::size_t col() const { return col_; }

 private:
  std::size_t row_;
  std::size_t col_;
};

// CSV with a header row; the last column is the class label. Labels are
// re-indexed 0..n_classes-1 in order of first appearance.
TabularDataset parse_tabular(const std::string& text);
TabularDataset load_tabular(const std::filesystem::path& path);
std::string format_tabular(const TabularDataset& d);
void save_tabular(const TabularDataset& d, const std::filesystem::path& path);

// Binary container: "PMI1", u32 n, H, W, C, n*H*W*C float32 pixels, n u32
// labels, u32 n_classes. Little-endian throughout.
ImageDataset load_images(const std::filesystem::path& path);
void save_images(const ImageDataset& d, const std::filesystem::path& path);

void validate(const TabularDataset& d);
void validate(const ImageDataset& d);

TabularDataset zero_pad_features(const TabularDataset& d, std::size_t target_n_features);

TabularDataset subset(const TabularDataset& d, const std::vector<std::size_t>& rows);
ImageDataset subset(const ImageDataset& d, const std::vector<std::size_t>& rows);

// Reproducible disjoint partition with round(n * ratio) training rows.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double ratio,
                                                                            std::uint64_t seed);
TabularSplit split(const TabularDataset& d, std::uint64_t seed, double ratio = 0.9);
ImageSplit split(const ImageDataset& d, std::uint64_t seed, double ratio = 0.9);

TabularDataset stratified_sample(const TabularDataset& d, std::size_t per_class, std::uint64_t seed);
ImageDataset stratified_sample(const ImageDataset& d, std::size_t per_class, std::uint64_t seed);

std::vector<std::size_t> class_counts(const std::vector<int>& labels, int n_classes);

}  // namespace paramap::data
