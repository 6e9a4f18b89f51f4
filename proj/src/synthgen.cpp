#include "milbench/synthgen.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "milbench/errors.hpp"

namespace milbench {

void GeneratorParams::validate() const {
  if (!(q_pos >= 0.0 && q_pos <= 1.0)) throw ParameterError("q_pos must lie in [0, 1]");
  if (s_low < 1 || s_low > s_high) throw ParameterError("need 1 <= s_low <= s_high");
  if (r < 1 || r > s_low) throw ParameterError("need 1 <= r <= s_low");
  if (!(sigma > 0.0)) throw ParameterError("sigma must be positive");
  if (k < 1 || k > m) throw ParameterError("need 1 <= k <= m");
  if (!std::isfinite(mu) || !std::isfinite(delta)) throw ParameterError("mu and delta must be finite");
}

std::vector<int> segment_labels(std::size_t s, std::optional<std::size_t> start, std::size_t r) {
  std::vector<int> labels(s, 0);
  if (start) {
    if (*start + r > s) throw ParameterError("segment runs past the end of the bag");
    for (std::size_t j = *start; j < *start + r; ++j) labels[j] = 1;
  }
  return labels;
}

Bag sample_bag(const GeneratorParams& params, Rng& rng) {
  params.validate();
  Bag bag;
  bag.label = rng.uniform() < params.q_pos ? 1 : 0;
  const auto s = static_cast<std::size_t>(rng.uniform_int(params.s_low, params.s_high));
  if (bag.label == 1) {
    bag.segment_start = static_cast<std::size_t>(rng.uniform_int(0, s - params.r));
  }
  bag.instance_labels = segment_labels(s, bag.segment_start, params.r);

  bag.embeddings = Matrix(s, params.m);
  for (std::size_t j = 0; j < s; ++j) {
    auto row = bag.embeddings.row(j);
    const bool shifted = bag.instance_labels[j] == 1;
    for (std::size_t f = 0; f < params.m; ++f) {
      const double mean = (shifted && f < params.k) ? params.mu + params.delta : params.mu;
      row[f] = gaussian_sample(rng, mean, params.sigma);
    }
  }
  return bag;
}

std::vector<Bag> sample_dataset(const GeneratorParams& params, std::size_t n_bags, Rng& rng) {
  if (n_bags == 0) throw ParameterError("sample_dataset: n_bags must be at least 1");
  params.validate();
  const Rng base = rng.split(rng.next_u64());
  std::vector<Bag> bags;
  bags.reserve(n_bags);
  for (std::size_t i = 0; i < n_bags; ++i) {
    Rng bag_rng = base.split(i);
    bags.push_back(sample_bag(params, bag_rng));
  }
  return bags;
}

std::size_t split_train_count(std::size_t n, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ParameterError("train_fraction must lie in (0, 1)");
  }
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train >= n) {
    throw ParameterError("split of " + std::to_string(n) + " bags at fraction " +
                         std::to_string(train_fraction) + " leaves an empty split");
  }
  return n_train;
}

std::size_t split_in_place(std::span<Bag> bags, const SplitSpec& spec, Rng& rng) {
  if (bags.empty()) throw ParameterError("split: empty dataset");
  const std::size_t n_train = split_train_count(bags.size(), spec.train_fraction);
  shuffle(bags, rng);
  return n_train;
}

std::pair<std::vector<Bag>, std::vector<Bag>> split(std::vector<Bag> dataset,
                                                    const SplitSpec& spec, Rng& rng) {
  const std::size_t n_train = split_in_place(dataset, spec, rng);
  std::vector<Bag> val(std::make_move_iterator(dataset.begin() + static_cast<std::ptrdiff_t>(n_train)),
                       std::make_move_iterator(dataset.end()));
  dataset.resize(n_train);
  return {std::move(dataset), std::move(val)};
}

// ---------------------------------------------------------------------------
// Files

namespace {

constexpr std::array<char, 8> kMagic = {'M', 'I', 'L', 'B', 'A', 'G', 'S', '\0'};

bool is_text_path(const std::filesystem::path& path) { return path.extension() == ".txt"; }

class LeWriter {
 public:
  explicit LeWriter(std::ofstream& out) : out_(out) {}

  template <class U>
  void put(U v) {
    std::array<char, sizeof(U)> bytes{};
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bytes[i] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xffu);
    }
    out_.write(bytes.data(), bytes.size());
  }
  void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void put_f64s(std::span<const double> values) {
    if constexpr (std::endian::native == std::endian::little) {
      out_.write(reinterpret_cast<const char*>(values.data()),
                 static_cast<std::streamsize>(values.size_bytes()));
    } else {
      for (double v : values) put_f64(v);
    }
  }

 private:
  std::ofstream& out_;
};

class LeReader {
 public:
  LeReader(std::ifstream& in, const std::filesystem::path& path) : in_(in), path_(path) {}

  template <class U>
  U get() {
    std::array<unsigned char, sizeof(U)> bytes{};
    read(bytes.data(), bytes.size());
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return static_cast<U>(v);
  }
  void get_f64s(std::span<double> values) {
    if constexpr (std::endian::native == std::endian::little) {
      read(values.data(), values.size_bytes());
    } else {
      for (double& v : values) v = std::bit_cast<double>(get<std::uint64_t>());
    }
  }
  void read(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw IoError("truncated dataset file: " + path_.string());
    }
  }

 private:
  std::ifstream& in_;
  const std::filesystem::path& path_;
};

void write_binary(const std::filesystem::path& path, std::span<const Bag> bags, std::size_t r) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  LeWriter w(out);
  out.write(kMagic.data(), kMagic.size());
  w.put<std::uint32_t>(kDatasetVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(r));
  w.put<std::uint64_t>(bags.size());
  for (const Bag& bag : bags) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(bag.num_instances()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(bag.num_features()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(bag.label));
    const std::int32_t u = bag.segment_start ? static_cast<std::int32_t>(*bag.segment_start) : -1;
    w.put<std::uint32_t>(static_cast<std::uint32_t>(u));
    w.put_f64s(bag.embeddings.values());
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_text(const std::filesystem::path& path, std::span<const Bag> bags, std::size_t r) {
  std::FILE* f = std::fopen(path.string().c_str(), "w");
  if (!f) throw IoError("cannot open for writing: " + path.string());
  std::fprintf(f, "# mil-bags v%u r=%zu\n", kDatasetVersion, r);
  for (const Bag& bag : bags) {
    const long u = bag.segment_start ? static_cast<long>(*bag.segment_start) : -1L;
    std::fprintf(f, "%zu %zu %d %ld\n", bag.num_instances(), bag.num_features(), bag.label, u);
    for (std::size_t j = 0; j < bag.num_instances(); ++j) {
      const auto row = bag.embeddings.row(j);
      for (std::size_t c = 0; c < row.size(); ++c) {
        std::fprintf(f, c == 0 ? "%.17g" : " %.17g", row[c]);
      }
      std::fputc('\n', f);
    }
  }
  const bool failed = std::ferror(f) != 0;
  if (std::fclose(f) != 0 || failed) throw IoError("write failed: " + path.string());
}

Bag make_bag(Matrix embeddings, int label, long u, std::size_t r, const std::filesystem::path& path) {
  if (label != 0 && label != 1) throw IoError("bad bag label in " + path.string());
  if ((label == 1) != (u >= 0)) throw IoError("segment start inconsistent with label in " + path.string());
  Bag bag;
  bag.label = label;
  if (u >= 0) bag.segment_start = static_cast<std::size_t>(u);
  try {
    bag.instance_labels = segment_labels(embeddings.rows(), bag.segment_start, r);
  } catch (const ParameterError& e) {
    throw IoError(std::string(e.what()) + " in " + path.string());
  }
  bag.embeddings = std::move(embeddings);
  return bag;
}

LoadedDataset read_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  LeReader rd(in, path);
  std::array<char, 8> magic{};
  rd.read(magic.data(), magic.size());
  if (magic != kMagic) throw IoError("not a bag dataset (bad magic): " + path.string());
  const auto version = rd.get<std::uint32_t>();
  if (version != kDatasetVersion) {
    throw IoError("unsupported dataset version " + std::to_string(version) + ": " + path.string());
  }
  LoadedDataset ds;
  ds.segment_length = rd.get<std::uint32_t>();
  const auto n = rd.get<std::uint64_t>();
  ds.bags.reserve(static_cast<std::size_t>(n));
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto s = rd.get<std::uint32_t>();
    const auto m = rd.get<std::uint32_t>();
    const auto y = static_cast<std::int32_t>(rd.get<std::uint32_t>());
    const auto u = static_cast<std::int32_t>(rd.get<std::uint32_t>());
    Matrix h(s, m);
    rd.get_f64s(h.values());
    ds.bags.push_back(make_bag(std::move(h), y, u, ds.segment_length, path));
  }
  return ds;
}

LoadedDataset read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  LoadedDataset ds;
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty dataset file: " + path.string());
  unsigned version = 0;
  std::size_t r = 0;
  if (std::sscanf(line.c_str(), "# mil-bags v%u r=%zu", &version, &r) != 2) {
    throw IoError("missing dataset header line: " + path.string());
  }
  if (version != kDatasetVersion) {
    throw IoError("unsupported dataset version " + std::to_string(version) + ": " + path.string());
  }
  ds.segment_length = r;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t s = 0, m = 0;
    int y = 0;
    long u = 0;
    if (std::sscanf(line.c_str(), "%zu %zu %d %ld", &s, &m, &y, &u) != 4) {
      throw IoError("malformed bag header '" + line + "' in " + path.string());
    }
    Matrix h(s, m);
    for (std::size_t j = 0; j < s; ++j) {
      if (!std::getline(in, line)) throw IoError("truncated bag in " + path.string());
      const char* p = line.data();
      const char* end = line.data() + line.size();
      for (std::size_t c = 0; c < m; ++c) {
        while (p < end && *p == ' ') ++p;
        double v = 0.0;
        auto [next, ec] = std::from_chars(p, end, v);
        if (ec != std::errc()) throw IoError("bad value in " + path.string());
        h(j, c) = v;
        p = next;
      }
    }
    ds.bags.push_back(make_bag(std::move(h), y, u, r, path));
  }
  return ds;
}

}  // namespace

void write_dataset(const std::filesystem::path& path, std::span<const Bag> bags,
                   std::size_t segment_length) {
  if (is_text_path(path)) {
    write_text(path, bags, segment_length);
  } else {
    write_binary(path, bags, segment_length);
  }
}

LoadedDataset read_dataset(const std::filesystem::path& path) {
  return is_text_path(path) ? read_text(path) : read_binary(path);
}

}  // namespace milbench
