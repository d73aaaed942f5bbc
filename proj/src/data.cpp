#include "missmod/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "missmod/errors.hpp"
#include "missmod/rng.hpp"

namespace missmod {

using json = nlohmann::json;

void SyntheticTaskConfig::validate() const {
  if (n_samples == 0) throw ConfigError("task.n_samples must be positive");
  if (n_classes < 2 && task_kind != TaskKind::multilabel) throw ConfigError("task.n_classes must be at least 2");
  if (task_kind == TaskKind::binary && n_classes != 2) throw ConfigError("binary tasks have exactly 2 classes");
  if (n_classes == 0) throw ConfigError("task.n_classes must be positive");
  if (latent_dim == 0) throw ConfigError("task.latent_dim must be positive");
  for (std::size_t m = 0; m < 2; ++m) {
    if (seq_len[m] == 0) throw ConfigError("task.seq_len must be positive");
    if (vocab_size[m] < 2) throw ConfigError("task.vocab_size must be at least 2");
    if (view_noise[m] < 0) throw ConfigError("task.view_noise must be non-negative");
  }
  if (noise < 0) throw ConfigError("task.noise must be non-negative");
}

namespace {

// Generating world shared by every stream of one task seed.
struct World {
  std::vector<double> centroids;                // [classes, latent]
  std::array<std::vector<double>, 2> codebook;  // [seq_len, vocab, latent] per modality
};

World make_world(const SyntheticTaskConfig& cfg) {
  auto rng = make_rng(cfg.seed, "world");
  World w;
  w.centroids = normal_values(rng, cfg.n_classes * cfg.latent_dim, 1.0);
  for (std::size_t m = 0; m < 2; ++m) {
    w.codebook[m] = normal_values(rng, cfg.seq_len[m] * cfg.vocab_size[m] * cfg.latent_dim, 1.0);
  }
  return w;
}

TokenSequence quantize(const World& w, const SyntheticTaskConfig& cfg, std::size_t m, const std::vector<double>& view) {
  TokenSequence tokens(cfg.seq_len[m]);
  const auto V = cfg.vocab_size[m], L = cfg.latent_dim;
  for (std::size_t t = 0; t < cfg.seq_len[m]; ++t) {
    double best = -std::numeric_limits<double>::infinity();
    TokenId best_id = 0;
    for (std::size_t v = 0; v < V; ++v) {
      const double* code = w.codebook[m].data() + (t * V + v) * L;
      double score = 0.0;
      for (std::size_t j = 0; j < L; ++j) score += code[j] * view[j];
      if (score > best) {
        best = score;
        best_id = static_cast<TokenId>(v);
      }
    }
    tokens[t] = best_id;
  }
  return tokens;
}

}  // namespace

namespace {

// Draws n complete samples; `label_of` maps (class draw, latent) to a label.
template <typename LabelFn>
Dataset draw_samples(const SyntheticTaskConfig& cfg, const World& world, std::string_view stream, std::size_t n,
                     LabelFn label_of) {
  auto rng = make_rng(cfg.seed, std::string("samples/") + std::string(stream));
  const auto L = cfg.latent_dim;
  Dataset out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.id = i;
    const std::size_t k = static_cast<std::size_t>(rng() % cfg.n_classes);
    auto z = normal_values(rng, L, cfg.noise);
    for (std::size_t j = 0; j < L; ++j) z[j] += world.centroids[k * L + j];
    s.label = label_of(k, z);
    for (std::size_t m = 0; m < 2; ++m) {
      auto view = z;
      auto eps = normal_values(rng, L, cfg.noise * cfg.view_noise[m]);
      for (std::size_t j = 0; j < L; ++j) view[j] += eps[j];
      (m == 0 ? s.m1 : s.m2) = quantize(world, cfg, m, view);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::uint8_t> sign_bits(const std::vector<double>& directions, std::size_t count,
                                    const std::vector<double>& z) {
  const auto L = z.size();
  std::vector<std::uint8_t> bits(count);
  for (std::size_t k = 0; k < count; ++k) {
    double dot = 0.0;
    for (std::size_t j = 0; j < L; ++j) dot += directions[k * L + j] * z[j];
    bits[k] = dot > 0.0 ? 1 : 0;
  }
  return bits;
}

}  // namespace

Dataset generate_dataset(const SyntheticTaskConfig& cfg, std::string_view stream) {
  cfg.validate();
  const World world = make_world(cfg);
  if (cfg.task_kind == TaskKind::multilabel) {
    // The latent sits near one of n_classes prototypes; label k is on when it
    // lies on the positive side of prototype k's direction.
    return draw_samples(cfg, world, stream, cfg.n_samples, [&](std::size_t, const std::vector<double>& z) {
      return Label{sign_bits(world.centroids, cfg.n_classes, z)};
    });
  }
  return draw_samples(cfg, world, stream, cfg.n_samples,
                      [](std::size_t k, const std::vector<double>&) { return Label{k}; });
}

Dataset generate_proxy_dataset(const SyntheticTaskConfig& cfg, std::size_t n, std::size_t bits,
                               std::string_view stream) {
  cfg.validate();
  if (bits == 0 || bits > 16) throw ConfigError("proxy label bits must lie in [1, 16]");
  const World world = make_world(cfg);
  auto rng = make_rng(cfg.seed, "proxy-directions");
  const auto directions = normal_values(rng, bits * cfg.latent_dim, 1.0);
  return draw_samples(cfg, world, stream, n, [&](std::size_t, const std::vector<double>& z) {
    const auto b = sign_bits(directions, bits, z);
    std::size_t k = 0;
    for (std::size_t i = 0; i < bits; ++i) k |= static_cast<std::size_t>(b[i]) << i;
    return Label{k};
  });
}

void MissingPattern::validate() const {
  constexpr double tol = 1e-9;
  if (p_both < -tol || p_m1_only < -tol || p_m2_only < -tol) {
    throw PatternError("missing pattern fractions must be non-negative");
  }
  if (std::abs(p_both + p_m1_only + p_m2_only - 1.0) > tol) {
    throw PatternError("missing pattern fractions must sum to 1 (samples missing both modalities are not allowed)");
  }
}

std::string MissingPattern::label() const {
  std::ostringstream os;
  os << std::llround(m1_rate() * 100.0) << '/' << std::llround(m2_rate() * 100.0);
  return os.str();
}

MissingPattern pattern_from_rates(double m1_rate, double m2_rate) {
  if (m1_rate < 0 || m1_rate > 1 || m2_rate < 0 || m2_rate > 1) {
    throw PatternError("modality rates must lie in [0, 1]");
  }
  if (m1_rate + m2_rate < 1.0 - 1e-12) {
    throw PatternError("rates " + std::to_string(m1_rate) + " + " + std::to_string(m2_rate) +
                       " < 1 would leave samples with no modality");
  }
  MissingPattern p;
  p.p_both = std::max(0.0, m1_rate + m2_rate - 1.0);
  p.p_m1_only = 1.0 - m2_rate;
  p.p_m2_only = 1.0 - m1_rate;
  p.validate();
  return p;
}

MissingPattern parse_pattern_label(std::string_view label) {
  const auto slash = label.find('/');
  if (slash == std::string_view::npos) throw PatternError("pattern label must look like '100/30'");
  try {
    const double a = std::stod(std::string(label.substr(0, slash)));
    const double b = std::stod(std::string(label.substr(slash + 1)));
    return pattern_from_rates(a / 100.0, b / 100.0);
  } catch (const std::invalid_argument&) {
    throw PatternError("pattern label must look like '100/30'");
  }
}

std::array<std::size_t, 3> subset_sizes(std::size_t n, const MissingPattern& pattern) {
  pattern.validate();
  const std::array<double, 3> p{std::max(0.0, pattern.p_both), std::max(0.0, pattern.p_m1_only),
                                std::max(0.0, pattern.p_m2_only)};
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(n) * p[i];
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    remainder[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % 3]];
  while (assigned > n) {
    // Only reachable through rounding noise in the inputs.
    auto it = std::max_element(counts.begin(), counts.end());
    --*it;
    --assigned;
  }
  return counts;
}

Split apply_pattern(const Dataset& dataset, const MissingPattern& pattern, std::uint64_t seed) {
  const auto counts = subset_sizes(dataset.size(), pattern);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_rng(seed, "missing-pattern");
  shuffle(order, rng);
  Split split;
  for (std::size_t k = 0; k < order.size(); ++k) {
    Sample s = dataset[order[k]];
    if (!s.complete()) throw DataError("apply_pattern expects complete samples (id " + std::to_string(s.id) + ")");
    if (k < counts[0]) {
      split.complete.push_back(std::move(s));
    } else if (k < counts[0] + counts[1]) {
      s.m2.reset();
      split.m1_only.push_back(std::move(s));
    } else {
      s.m1.reset();
      split.m2_only.push_back(std::move(s));
    }
  }
  auto by_id = [](const Sample& a, const Sample& b) { return a.id < b.id; };
  std::sort(split.complete.begin(), split.complete.end(), by_id);
  std::sort(split.m1_only.begin(), split.m1_only.end(), by_id);
  std::sort(split.m2_only.begin(), split.m2_only.end(), by_id);
  return split;
}

std::vector<MissingPattern> test_grid(const MissingPattern&) {
  return {pattern_from_rates(1.0, 0.3), pattern_from_rates(0.3, 1.0), pattern_from_rates(0.65, 0.65)};
}

TrainTestSplit split_train_test(const Dataset& dataset, double test_fraction, std::uint64_t seed) {
  if (test_fraction <= 0.0 || test_fraction >= 1.0) throw ConfigError("test fraction must lie in (0, 1)");
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_rng(seed, "train-test");
  shuffle(order, rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(dataset.size())));
  TrainTestSplit out;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (k < n_test ? out.test : out.train).push_back(dataset[order[k]]);
  }
  auto by_id = [](const Sample& a, const Sample& b) { return a.id < b.id; };
  std::sort(out.train.begin(), out.train.end(), by_id);
  std::sort(out.test.begin(), out.test.end(), by_id);
  return out;
}

namespace {

json tokens_json(const std::optional<TokenSequence>& t) { return t ? json(*t) : json(nullptr); }

std::optional<TokenSequence> tokens_from(const json& j, const char* key, std::size_t line) {
  if (!j.contains(key)) throw DataError("line " + std::to_string(line) + ": missing field '" + key + "'");
  const auto& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  if (!v.is_array()) throw DataError("line " + std::to_string(line) + ": '" + key + "' must be an array or null");
  TokenSequence out;
  for (const auto& x : v) {
    if (!x.is_number_unsigned()) {
      throw DataError("line " + std::to_string(line) + ": token ids must be non-negative integers");
    }
    out.push_back(x.get<TokenId>());
  }
  return out;
}

}  // namespace

void write_jsonl(const std::filesystem::path& path, const Dataset& samples) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  for (const auto& s : samples) {
    json j;
    j["id"] = s.id;
    j["m1_tokens"] = tokens_json(s.m1);
    j["m2_tokens"] = tokens_json(s.m2);
    if (const auto* idx = std::get_if<std::size_t>(&s.label)) {
      j["label"] = *idx;
    } else {
      j["label"] = std::get<std::vector<std::uint8_t>>(s.label);
    }
    os << j.dump() << '\n';
  }
}

Dataset read_jsonl(const std::filesystem::path& path, TaskKind kind) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  Dataset out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    Sample s;
    s.id = j.value("id", static_cast<std::uint64_t>(out.size()));
    s.m1 = tokens_from(j, "m1_tokens", line_no);
    s.m2 = tokens_from(j, "m2_tokens", line_no);
    if (!s.m1 && !s.m2) throw DataError("line " + std::to_string(line_no) + ": sample has no modality");
    const auto& label = j.at("label");
    if (kind == TaskKind::multilabel) {
      s.label = label.get<std::vector<std::uint8_t>>();
    } else {
      s.label = label.get<std::size_t>();
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace missmod
