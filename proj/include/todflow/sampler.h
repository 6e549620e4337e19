#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace todflow {

enum class Strategy { kGreedy, kTopK, kTopP };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view s);

struct DecodingConfig {
  Strategy strategy = Strategy::kGreedy;
  int k = 0;             // top_k only
  double p = 1.0;        // top_p only
  double temperature = 1.0;
  int max_new_tokens = 256;
  std::vector<std::string> stop_sequences;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument.
  void validate() const;
};

// Final sampling distribution over candidates given raw logits
// (log-probabilities are fine): temperature scaling, then top-k or nucleus
// truncation, renormalized. Greedy yields a one-hot vector on the first
// maximum.
std::vector<double> filtered_distribution(std::span<const double> logits, const DecodingConfig& config);

// Uniform double in [0, 1) built from 53 random bits; identical on every
// standard library, unlike std::uniform_real_distribution.
double uniform_unit(std::mt19937_64& rng);

size_t draw_index(std::span<const double> probabilities, std::mt19937_64& rng);
size_t sample_index(std::span<const double> logits, const DecodingConfig& config, std::mt19937_64& rng);

}  // namespace todflow
