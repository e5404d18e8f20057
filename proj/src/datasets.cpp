#include "paramap/datasets.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "paramap/rng.hpp"

namespace paramap::data {

ParseError::ParseError(std::size_t row, std::size_t col, const std::string& what)
    : std::runtime_error("row " + std::to_string(row) + ", col " + std::to_string(col) + ": " + what),
      row_(row),
      col_(col) {}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

// Splits one CSV record starting at pos. Handles quoted fields with doubled
// quotes. Advances pos past the line terminator.
std::vector<std::string> next_record(const std::string& text, std::size_t& pos, std::size_t line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  bool was_quoted = false;
  while (pos < text.size()) {
    const char ch = text[pos];
    if (quoted) {
      if (ch == '"') {
        if (pos + 1 < text.size() && text[pos + 1] == '"') {
          cur.push_back('"');
          pos += 2;
          continue;
        }
        quoted = false;
        ++pos;
        continue;
      }
      cur.push_back(ch);
      ++pos;
      continue;
    }
    if (ch == '"' && cur.empty() && !was_quoted) {
      quoted = true;
      was_quoted = true;
      ++pos;
      continue;
    }
    if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
      was_quoted = false;
      ++pos;
      continue;
    }
    if (ch == '\r' || ch == '\n') {
      if (ch == '\r' && pos + 1 < text.size() && text[pos + 1] == '\n') ++pos;
      ++pos;
      fields.push_back(std::move(cur));
      return fields;
    }
    cur.push_back(ch);
    ++pos;
  }
  if (quoted) throw ParseError(line, fields.size() + 1, "unterminated quoted field");
  fields.push_back(std::move(cur));
  return fields;
}

std::string trim(const std::string& s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t')) --b;
  return s.substr(a, b - a);
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos && (s.empty() || (s.front() != ' ' && s.back() != ' '))) {
    return s;
  }
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw std::runtime_error("image file truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

constexpr char kImageMagic[4] = {'P', 'M', 'I', '1'};

template <class D>
D stratified_impl(const D& d, std::size_t per_class, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(d.n_classes);
  for (std::size_t i = 0; i < d.labels.size(); ++i) by_class[d.labels[i]].push_back(i);
  Rng rng(seed);
  std::vector<std::size_t> rows;
  for (int c = 0; c < d.n_classes; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < per_class) {
      throw std::invalid_argument("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                                  " rows, fewer than " + std::to_string(per_class));
    }
    rng.shuffle(idx);
    rows.insert(rows.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(per_class));
  }
  std::sort(rows.begin(), rows.end());
  return subset(d, rows);
}

template <class D>
SplitPair<D> split_impl(const D& d, std::size_t n, std::uint64_t seed, double ratio) {
  auto [tr, te] = split_indices(n, ratio, seed);
  SplitPair<D> out;
  out.train = subset(d, tr);
  out.test = subset(d, te);
  out.ratio = ratio;
  out.train_rows = std::move(tr);
  out.test_rows = std::move(te);
  return out;
}

}  // namespace

TabularDataset parse_tabular(const std::string& text) {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw ParseError(1, 1, "file is empty");
  std::size_t pos = 0;
  std::size_t line = 1;
  const auto header = next_record(text, pos, line);
  if (header.size() < 2) throw ParseError(1, header.size(), "need at least one feature column and a label column");

  TabularDataset d;
  d.n_features = header.size() - 1;
  for (std::size_t c = 0; c < d.n_features; ++c) d.feature_names.push_back(trim(header[c]));
  d.label_name = trim(header.back());

  std::unordered_map<std::string, int> class_of;
  while (pos < text.size()) {
    ++line;
    const std::size_t start = pos;
    auto rec = next_record(text, pos, line);
    const bool blank_line = rec.size() == 1 && trim(rec[0]).empty();
    if (blank_line) {
      // Trailing blank lines are tolerated; interior ones are not.
      if (text.find_first_not_of(" \t\r\n", start) == std::string::npos) break;
      throw ParseError(line, 1, "blank line");
    }
    if (rec.size() != header.size()) {
      throw ParseError(line, std::min(rec.size(), header.size()) + 1,
                       "expected " + std::to_string(header.size()) + " columns, found " + std::to_string(rec.size()));
    }
    for (std::size_t c = 0; c < d.n_features; ++c) {
      const std::string cell = trim(rec[c]);
      if (cell.empty()) throw ParseError(line, c + 1, "blank cell");
      double v = 0.0;
      const char* first = cell.data();
      const char* last = first + cell.size();
      if (*first == '+') ++first;
      auto [ptr, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || ptr != last) throw ParseError(line, c + 1, "not a number: '" + cell + "'");
      if (!std::isfinite(v)) throw ParseError(line, c + 1, "non-finite value");
      d.features.push_back(v);
    }
    const std::string lab = trim(rec.back());
    if (lab.empty()) throw ParseError(line, header.size(), "blank cell");
    auto [it, inserted] = class_of.try_emplace(lab, static_cast<int>(d.class_names.size()));
    if (inserted) d.class_names.push_back(lab);
    d.labels.push_back(it->second);
    ++d.n_rows;
  }
  if (d.n_rows == 0) throw ParseError(2, 1, "no data rows");
  d.n_classes = static_cast<int>(d.class_names.size());
  return d;
}

TabularDataset load_tabular(const std::filesystem::path& path) { return parse_tabular(read_file(path)); }

std::string format_tabular(const TabularDataset& d) {
  validate(d);
  std::string out;
  for (std::size_t c = 0; c < d.n_features; ++c) {
    out += quote_if_needed(c < d.feature_names.size() ? d.feature_names[c] : "f" + std::to_string(c));
    out += ',';
  }
  out += quote_if_needed(d.label_name) + "\n";
  for (std::size_t r = 0; r < d.n_rows; ++r) {
    for (std::size_t c = 0; c < d.n_features; ++c) {
      out += format_double(d.at(r, c));
      out += ',';
    }
    const int l = d.labels[r];
    out += quote_if_needed(static_cast<std::size_t>(l) < d.class_names.size() ? d.class_names[l] : std::to_string(l));
    out += '\n';
  }
  return out;
}

void save_tabular(const TabularDataset& d, const std::filesystem::path& path) { write_file(path, format_tabular(d)); }

ImageDataset load_images(const std::filesystem::path& path) {
  const std::string in = read_file(path);
  if (in.size() < 4 || std::memcmp(in.data(), kImageMagic, 4) != 0) {
    throw std::runtime_error(path.string() + ": not an image container");
  }
  std::size_t pos = 4;
  ImageDataset d;
  d.n = get_u32(in, pos);
  d.height = static_cast<int>(get_u32(in, pos));
  d.width = static_cast<int>(get_u32(in, pos));
  d.channels = static_cast<int>(get_u32(in, pos));
  const std::size_t count = d.n * d.image_size();
  if (pos + count * 4 > in.size()) throw std::runtime_error(path.string() + ": truncated pixel block");
  d.pixels.resize(count);
  for (std::size_t i = 0; i < count; ++i) d.pixels[i] = std::bit_cast<float>(get_u32(in, pos));
  d.labels.resize(d.n);
  for (auto& l : d.labels) l = static_cast<int>(get_u32(in, pos));
  d.n_classes = static_cast<int>(get_u32(in, pos));
  if (pos != in.size()) throw std::runtime_error(path.string() + ": trailing bytes");
  validate(d);
  return d;
}

void save_images(const ImageDataset& d, const std::filesystem::path& path) {
  validate(d);
  std::string out(kImageMagic, 4);
  out.reserve(24 + d.pixels.size() * 4 + d.labels.size() * 4);
  put_u32(out, static_cast<std::uint32_t>(d.n));
  put_u32(out, static_cast<std::uint32_t>(d.height));
  put_u32(out, static_cast<std::uint32_t>(d.width));
  put_u32(out, static_cast<std::uint32_t>(d.channels));
  for (double p : d.pixels) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(p)));
  for (int l : d.labels) put_u32(out, static_cast<std::uint32_t>(l));
  put_u32(out, static_cast<std::uint32_t>(d.n_classes));
  write_file(path, out);
}

void validate(const TabularDataset& d) {
  if (d.n_rows < 1) throw std::invalid_argument("dataset has no rows");
  if (d.features.size() != d.n_rows * d.n_features) throw std::invalid_argument("feature block size mismatch");
  if (d.labels.size() != d.n_rows) throw std::invalid_argument("label count mismatch");
  if (d.n_classes < 1) throw std::invalid_argument("n_classes must be positive");
  for (double v : d.features) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite feature value");
  }
  for (int l : d.labels) {
    if (l < 0 || l >= d.n_classes) throw std::invalid_argument("label out of range");
  }
}

void validate(const ImageDataset& d) {
  if (d.height < 1 || d.width < 1 || d.channels < 1) throw std::invalid_argument("bad image geometry");
  if (d.pixels.size() != d.n * d.image_size()) throw std::invalid_argument("pixel block size mismatch");
  if (d.labels.size() != d.n) throw std::invalid_argument("label count mismatch");
  if (d.n_classes < 1) throw std::invalid_argument("n_classes must be positive");
  for (double p : d.pixels) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("pixel outside [0,1]");
  }
  for (int l : d.labels) {
    if (l < 0 || l >= d.n_classes) throw std::invalid_argument("label out of range");
  }
}

TabularDataset zero_pad_features(const TabularDataset& d, std::size_t target_n_features) {
  if (target_n_features < d.n_features) {
    throw std::invalid_argument("cannot pad " + std::to_string(d.n_features) + " features down to " +
                                std::to_string(target_n_features));
  }
  if (target_n_features == d.n_features) return d;
  TabularDataset out = d;
  out.n_features = target_n_features;
  out.features.assign(d.n_rows * target_n_features, 0.0);
  for (std::size_t r = 0; r < d.n_rows; ++r) {
    std::copy_n(d.row(r), d.n_features, out.features.begin() + static_cast<std::ptrdiff_t>(r * target_n_features));
  }
  for (std::size_t c = d.feature_names.size(); c < d.n_features; ++c) out.feature_names.push_back("f" + std::to_string(c));
  out.feature_names.resize(d.n_features);
  for (std::size_t c = d.n_features; c < target_n_features; ++c) out.feature_names.push_back("pad" + std::to_string(c));
  return out;
}

TabularDataset subset(const TabularDataset& d, const std::vector<std::size_t>& rows) {
  TabularDataset out;
  out.n_rows = rows.size();
  out.n_features = d.n_features;
  out.n_classes = d.n_classes;
  out.feature_names = d.feature_names;
  out.label_name = d.label_name;
  out.class_names = d.class_names;
  out.features.reserve(rows.size() * d.n_features);
  out.labels.reserve(rows.size());
  for (std::size_t r : rows) {
    if (r >= d.n_rows) throw std::out_of_range("row index " + std::to_string(r) + " out of range");
    out.features.insert(out.features.end(), d.row(r), d.row(r) + d.n_features);
    out.labels.push_back(d.labels[r]);
  }
  return out;
}

ImageDataset subset(const ImageDataset& d, const std::vector<std::size_t>& rows) {
  ImageDataset out;
  out.n = rows.size();
  out.height = d.height;
  out.width = d.width;
  out.channels = d.channels;
  out.n_classes = d.n_classes;
  const std::size_t sz = d.image_size();
  out.pixels.reserve(rows.size() * sz);
  for (std::size_t r : rows) {
    if (r >= d.n) throw std::out_of_range("row index " + std::to_string(r) + " out of range");
    const auto first = d.pixels.begin() + static_cast<std::ptrdiff_t>(r * sz);
    out.pixels.insert(out.pixels.end(), first, first + static_cast<std::ptrdiff_t>(sz));
    out.labels.push_back(d.labels[r]);
  }
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double ratio,
                                                                            std::uint64_t seed) {
  if (n < 10) throw std::invalid_argument("split needs at least 10 rows, got " + std::to_string(n));
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split ratio must be in (0,1)");
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed);
  rng.shuffle(perm);
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratio));
  std::vector<std::size_t> tr(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> te(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  std::sort(tr.begin(), tr.end());
  std::sort(te.begin(), te.end());
  return {tr, te};
}

TabularSplit split(const TabularDataset& d, std::uint64_t seed, double ratio) {
  return split_impl(d, d.n_rows, seed, ratio);
}

ImageSplit split(const ImageDataset& d, std::uint64_t seed, double ratio) { return split_impl(d, d.n, seed, ratio); }

TabularDataset stratified_sample(const TabularDataset& d, std::size_t per_class, std::uint64_t seed) {
  return stratified_impl(d, per_class, seed);
}

ImageDataset stratified_sample(const ImageDataset& d, std::size_t per_class, std::uint64_t seed) {
  return stratified_impl(d, per_class, seed);
}

std::vector<std::size_t> class_counts(const std::vector<int>& labels, int n_classes) {
  std::vector<std::size_t> out(n_classes, 0);
  for (int l : labels) ++out.at(l);
  return out;
}

}  // namespace paramap::data
