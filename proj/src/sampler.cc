#include "todflow/sampler.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace todflow {

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kGreedy: return "greedy";
    case Strategy::kTopK: return "top_k";
    case Strategy::kTopP: return "top_p";
  }
  return "greedy";
}

Strategy parse_strategy(std::string_view s) {
  if (s == "greedy") return Strategy::kGreedy;
  if (s == "top_k") return Strategy::kTopK;
  if (s == "top_p") return Strategy::kTopP;
  throw std::invalid_argument("unknown decoding strategy '" + std::string(s) + "'");
}

void DecodingConfig::validate() const {
  if (!(temperature > 0.0) || temperature > 1.0) throw std::invalid_argument("temperature must be in (0, 1]");
  if (max_new_tokens < 0) throw std::invalid_argument("max_new_tokens must be non-negative");
  if (strategy == Strategy::kTopK && k < 1) throw std::invalid_argument("top_k requires k >= 1");
  if (strategy == Strategy::kTopP && (!(p > 0.0) || p > 1.0)) throw std::invalid_argument("top_p requires p in (0, 1]");
  for (const auto& s : stop_sequences)
    if (s.empty()) throw std::invalid_argument("empty stop sequence");
}

std::vector<double> filtered_distribution(std::span<const double> logits, const DecodingConfig& config) {
  const size_t n = logits.size();
  if (n == 0) throw std::invalid_argument("empty logits");
  std::vector<double> probs(n, 0.0);
  if (config.strategy == Strategy::kGreedy) {
    probs[std::max_element(logits.begin(), logits.end()) - logits.begin()] = 1.0;
    return probs;
  }
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return logits[a] > logits[b]; });

  size_t keep = n;
  if (config.strategy == Strategy::kTopK) keep = std::min(n, static_cast<size_t>(config.k));

  const double top = logits[order.front()];
  std::vector<double> scaled(n, 0.0);
  double total = 0.0;
  for (size_t i = 0; i < keep; ++i) {
    scaled[order[i]] = std::exp((logits[order[i]] - top) / config.temperature);
    total += scaled[order[i]];
  }
  if (config.strategy == Strategy::kTopP && config.p < 1.0) {
    double cumulative = 0.0;
    size_t cut = 0;
    while (cut < n) {
      cumulative += scaled[order[cut]] / total;
      ++cut;
      if (cumulative >= config.p) break;
    }
    total = 0.0;
    for (size_t i = 0; i < n; ++i) {
      if (i >= cut) scaled[order[i]] = 0.0;
      total += scaled[order[i]];
    }
  }
  for (size_t i = 0; i < n; ++i) probs[i] = scaled[i] / total;
  return probs;
}

double uniform_unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

size_t draw_index(std::span<const double> probabilities, std::mt19937_64& rng) {
  double u = uniform_unit(rng);
  double cumulative = 0.0;
  size_t last = 0;
  for (size_t i = 0; i < probabilities.size(); ++i) {
    if (probabilities[i] <= 0.0) continue;
    last = i;
    cumulative += probabilities[i];
    if (u < cumulative) return i;
  }
  return last;
}

size_t sample_index(std::span<const double> logits, const DecodingConfig& config, std::mt19937_64& rng) {
  auto probs = filtered_distribution(logits, config);
  if (config.strategy == Strategy::kGreedy) return std::max_element(probs.begin(), probs.end()) - probs.begin();
  return draw_index(probs, rng);
}

}  // namespace todflow
