#include "paramap/synthetic.hpp"

#include <cstdio>
#include <stdexcept>

#include "paramap/rng.hpp"

namespace paramap::synth {

data::TabularDataset tail_noise_dataset(std::size_t rows, double rho, std::uint64_t seed, const NoiseFamily& family) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("noise rate must be in [0, 1]");
  Rng rng(seed);
  data::TabularDataset d;
  d.n_rows = rows;
  d.n_features = 1;
  d.n_classes = 2;
  d.feature_names = {"x"};
  d.label_name = "y";
  d.class_names = {"0", "1"};
  d.features.reserve(rows);
  d.labels.reserve(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    int y = rng.uniform() < 0.5 ? 1 : 0;
    const double z = rng.normal() + (y == 1 ? family.separation : -family.separation);
    if (y == 0 && z < family.tail && rng.uniform() < rho) y = 1;
    d.features.push_back(z + family.offset);
    d.labels.push_back(y);
  }
  return d;
}

std::vector<GeneratedCorpus> write_noise_family(const std::filesystem::path& dir, std::size_t count,
                                                std::size_t rows, std::uint64_t seed, const NoiseFamily& family) {
  if (count == 0) throw std::invalid_argument("need at least one corpus");
  std::filesystem::create_directories(dir);
  std::vector<GeneratedCorpus> out;
  for (std::size_t i = 0; i < count; ++i) {
    const double t = count == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(count - 1);
    const double rho = family.rho_min + t * (family.rho_max - family.rho_min);
    char name[32];
    std::snprintf(name, sizeof name, "noise%03zu", i);
    GeneratedCorpus c{name, dir / (std::string(name) + ".csv"), rho};
    data::save_tabular(tail_noise_dataset(rows, rho, mix_seed(seed, i), family), c.path);
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace paramap::synth
