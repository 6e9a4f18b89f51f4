#pragma once

// Shifted Mean MIL: bags of Gaussian instance embeddings where positive bags
// hide one contiguous run of `r` instances whose first `k` features have their
// mean shifted by `delta`.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "milbench/numerics.hpp"

namespace milbench {

struct GeneratorParams {
  double q_pos = 0.5;
  std::size_t s_low = 20;
  std::size_t s_high = 60;
  std::size_t r = 12;
  double delta = 0.5;
  double mu = 0.0;
  double sigma = 1.0;
  std::size_t m = 768;
  std::size_t k = 1;  // features [0, k) are discriminative

  /// Throws ParameterError when any invariant is violated.
  void validate() const;

  friend bool operator==(const GeneratorParams&, const GeneratorParams&) = default;
};

struct Bag {
  Matrix embeddings;  // S x M
  int label = 0;
  std::optional<std::size_t> segment_start;  // 0-based, present iff label == 1
  std::vector<int> instance_labels;          // length S

  std::size_t num_instances() const { return embeddings.rows(); }
  std::size_t num_features() const { return embeddings.cols(); }
};

struct SplitSpec {
  double train_fraction = 0.8;  // 4:1 train:val
  std::uint64_t seed = 0;
  std::size_t test_size = 1000;
};

/// Instance labels for a bag of `s` instances with optional segment [u, u+r).
std::vector<int> segment_labels(std::size_t s, std::optional<std::size_t> start, std::size_t r);

Bag sample_bag(const GeneratorParams& params, Rng& rng);

/// n_bags i.i.d. bags. Bag i is drawn from its own stream split off `rng`, so
/// the result does not depend on how generation is scheduled.
std::vector<Bag> sample_dataset(const GeneratorParams& params, std::size_t n_bags, Rng& rng);

/// Number of training bags for a split of `n` bags. Throws ParameterError
/// when either side would be empty.
std::size_t split_train_count(std::size_t n, double train_fraction);

/// Shuffles `bags` in place and returns the train count: the first part is
/// the training split, the rest is validation.
std::size_t split_in_place(std::span<Bag> bags, const SplitSpec& spec, Rng& rng);

/// Random partition of `dataset` into (train, val).
std::pair<std::vector<Bag>, std::vector<Bag>> split(std::vector<Bag> dataset,
                                                    const SplitSpec& spec, Rng& rng);

// Dataset files ---------------------------------------------------------------
//
// Text (".txt"): a first line "# mil-bags v1 r=<R>", then per bag one header
// line "S M y u" (u = -1 for negative bags) followed by S lines of M
// space-separated values with 17 significant digits.
//
// Binary (any other extension, conventionally ".bin"), little-endian:
//   magic "MILBAGS\0" | u32 version (1) | u32 r | u64 n_bags
//   per bag: u32 S | u32 M | i32 y | i32 u (-1 if negative) | S*M f64

inline constexpr std::uint32_t kDatasetVersion = 1;

void write_dataset(const std::filesystem::path& path, std::span<const Bag> bags,
                   std::size_t segment_length);

struct LoadedDataset {
  std::vector<Bag> bags;
  std::size_t segment_length = 0;
};

/// Reads a dataset written by write_dataset. Throws IoError on malformed or
/// unreadable files.
LoadedDataset read_dataset(const std::filesystem::path& path);

}  // namespace milbench
