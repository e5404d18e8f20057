#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "paramap/datasets.hpp"

// Synthetic corpora whose best ridge penalty is a known monotone function of
// an injected label-noise rate.
namespace paramap::synth {

struct NoiseFamily {
  double offset = -4.0;     // added to the latent score, so the intercept matters
  double separation = 1.0;  // class means at +-separation
  double tail = -1.5;       // class-0 points with latent score below this may flip
  double rho_min = 0.05;
  double rho_max = 0.45;
};

// One feature x = z + offset with z ~ N(+-separation, 1) for balanced classes;
// a class-0 point with z < tail is relabeled 1 with probability rho.
data::TabularDataset tail_noise_dataset(std::size_t rows, double rho, std::uint64_t seed,
                                        const NoiseFamily& family = {});

struct GeneratedCorpus {
  std::string id;
  std::filesystem::path path;
  double rho = 0.0;
};

// Writes `count` corpora with rho evenly spaced over [rho_min, rho_max].
std::vector<GeneratedCorpus> write_noise_family(const std::filesystem::path& dir, std::size_t count,
                                                std::size_t rows, std::uint64_t seed,
                                                const NoiseFamily& family = {});

}  // namespace paramap::synth
